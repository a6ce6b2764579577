#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "setident/tensor.hpp"

namespace setident {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

inline void append_prefixed(ParameterList& out, const std::string& prefix, const ParameterList& in) {
  for (const auto& p : in) out.push_back({prefix + p.name, p.tensor});
}

inline std::size_t count_elements(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

/// y = x·W + b with W stored [in×out].
class Linear {
 public:
  Linear() = default;

  template <class Rng>
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight_(Tensor::randn(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng, true)),
        bias_(Tensor::zeros(1, out, true)) {}

  Tensor operator()(const Tensor& x) const { return add_row(matmul(x, weight_), bias_); }

  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  ParameterList parameters() const { return {{"weight", weight_}, {"bias", bias_}}; }

 private:
  Tensor weight_;
  Tensor bias_;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(const ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= s;
    }
  }
  return norm;
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment gradient descent over a fixed parameter list.
class Adam {
 public:
  Adam(ParameterList params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void zero_grad() {
    for (const auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& p = params_[i].tensor;
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
        w[j] -= opt_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt_.eps);
      }
    }
  }

  const ParameterList& parameters() const { return params_; }
  std::size_t steps() const { return t_; }

 private:
  ParameterList params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace setident
