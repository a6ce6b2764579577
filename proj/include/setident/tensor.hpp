#pragma once

// Dense 2-D tensors with tape-style reverse-mode differentiation.
//
// A Tensor is a shared handle to an immutable node. Ops record their parents
// and a backward closure when gradient recording is enabled and at least one
// input requires a gradient. backward() walks the recorded graph once and then
// releases it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "setident/error.hpp"

namespace setident {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;

  std::string str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& finite_checks_flag() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Enables or disables NaN/Inf detection on every op result (on by default in debug builds).
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }
inline bool finite_checks() { return detail::finite_checks_flag(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> data,
                     bool requires_grad = false) {
    if (data.size() != rows * cols) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + Shape{rows, cols}.str());
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = {rows, cols};
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    check_finite(*node, "from");
    return Tensor(std::move(node));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
  }

  static Tensor filled(std::size_t rows, std::size_t cols, double v) {
    return from(rows, cols, std::vector<double>(rows * cols, v));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from(1, 1, {v}, requires_grad); }

  static Tensor row(std::span<const double> v, bool requires_grad = false) {
    return from(1, v.size(), std::vector<double>(v.begin(), v.end()), requires_grad);
  }

  static Tensor identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return from(n, n, std::move(d));
  }

  template <class Rng>
  static Tensor randn(std::size_t rows, std::size_t cols, double stddev, Rng& rng,
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(rows * cols);
    for (auto& x : d) x = dist(rng);
    return from(rows, cols, std::move(d), requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
    return node_->value[0];
  }
  std::vector<double> row_values(std::size_t r) const {
    auto first = node_->value.begin() + static_cast<std::ptrdiff_t>(r * cols());
    return {first, first + static_cast<std::ptrdiff_t>(cols())};
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty when nothing has flowed into this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  /// In-place access for optimizers and checkpoint loading. Leaves only.
  std::span<double> mutable_data() const {
    if (!node_->parents.empty()) throw ContractError("mutable_data() on a non-leaf tensor");
    return node_->value;
  }
  std::span<double> mutable_grad() const { return node_->ensure_grad(); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  static void check_finite(const detail::Node& n, const char* op) {
    if (!finite_checks()) return;
    for (double v : n.value) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward, const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  Tensor::check_finite(*node, op);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.handle());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

// C[m×n] += A[m×k] · B[k×n]; each output element accumulates over k in order.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]^T
inline void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[k×n] += A[m×k]^T · B[m×n]
inline void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape().str() + " x " +
                         b.shape().str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) detail::gemm_nt_acc(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
        if (pb.requires_grad) detail::gemm_tn_acc(pa.value.data(), self.grad.data(), pb.ensure_grad().data(), m, k, n);
      },
      "matmul");
}

/// a · bᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + a.shape().str() + " x " +
                         b.shape().str() + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        // dA = dC · B, dB = dCᵀ · A
        if (pa.requires_grad) detail::gemm_acc(self.grad.data(), pb.value.data(), pa.ensure_grad().data(), m, n, k);
        if (pb.requires_grad) detail::gemm_tn_acc(self.grad.data(), pa.value.data(), pb.ensure_grad().data(), m, n, k);
      },
      "matmul_nt");
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return detail::make_result(
      {n, m}, std::move(out), {a},
      [m, n](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
      },
      "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b},
      [](detail::Node& self) {
        for (auto& p : self.parents) {
          if (!p->requires_grad) continue;
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b},
      [](detail::Node& self) {
        if (self.parents[0]->requires_grad) {
          auto& g = self.parents[0]->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
          auto& g = self.parents[1]->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      },
      "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result(
      a.shape(), std::move(out), {a, b},
      [](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          auto& g = pa.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
      },
      "mul");
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [s](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
      },
      "scale");
}

/// x[m×n] + bias[1×n] added to every row.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + bias.shape().str() + " does not fit " + x.shape().str());
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return detail::make_result(
      x.shape(), std::move(out), {x, bias},
      [m, n](detail::Node& self) {
        if (self.parents[0]->requires_grad) {
          auto& g = self.parents[0]->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
          auto& g = self.parents[1]->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
      },
      "add_row");
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [](detail::Node& self) {
        auto& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (p.value[i] > 0.0) g[i] += self.grad[i];
      },
      "relu");
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

/// Per-row layer normalization followed by gain[1×n] and bias[1×n].
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.shape() != Shape{1, n} || bias.shape() != Shape{1, n}) {
    throw DimensionError("layer_norm: gain/bias must be [1x" + std::to_string(n) + "]");
  }
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = xv[i * n + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xv[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain.data()[j] + bias.data()[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& dy = self.grad;
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy[i * n + j] * pg.value[j];
              sum_d += d;
              sum_dx += d * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double d = dy[i * n + j] * pg.value[j];
              g[i * n + j] += inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
            }
          }
        }
      },
      "layer_norm");
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    const double mx = *std::max_element(r, r + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (out[i * n + j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [m, n](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.value;
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
        }
      },
      "softmax_rows");
}

inline Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    const double mx = *std::max_element(r, r + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = r[j] - lse;
  }
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [m, n](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < n; ++j) sum += self.grad[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            g[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * sum;
        }
      },
      "log_softmax_rows");
}

/// Scales every row to unit L2 norm (used for cosine similarity).
inline Tensor normalize_rows(const Tensor& x, double eps = 1e-12) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n), norms(m);
  auto xv = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xv[i * n + j] * xv[i * n + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] / norms[i];
  }
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [m, n, norms = std::move(norms)](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        const auto& y = self.value;
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            g[i * n + j] += (self.grad[i * n + j] - y[i * n + j] * dot) / norms[i];
        }
      },
      "normalize_rows");
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Row r of the result is row idx[r] of x. Indices may repeat.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t n = x.cols();
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " +
                           x.shape().str());
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return detail::make_result(
      {idx.size(), n}, std::move(out), {x},
      [n, idx = std::vector<std::size_t>(idx.begin(), idx.end())](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
      },
      "gather_rows");
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + x.shape().str());
  }
  const std::size_t n = x.cols();
  auto first = x.data().begin() + static_cast<std::ptrdiff_t>(begin * n);
  std::vector<double> out(first, first + static_cast<std::ptrdiff_t>(count * n));
  return detail::make_result(
      {count, n}, std::move(out), {x},
      [begin, n](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
      },
      "slice_rows");
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") out of range for " + x.shape().str());
  }
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.data()[i * n + begin + j];
  return detail::make_result(
      {m, count}, std::move(out), {x},
      [m, n, begin, count](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += self.grad[i * count + j];
      },
      "slice_cols");
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column mismatch " + p.shape().str());
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result(
      {m, n}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
      [](detail::Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
          if (p->requires_grad) {
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
          }
          off += p->value.size();
        }
      },
      "concat_rows");
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row mismatch " + p.shape().str());
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out[i * n + off + j] = p.at(i, j);
    off += p.cols();
  }
  return detail::make_result(
      {m, n}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
      [m, n](detail::Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
          const std::size_t c = p->shape.cols;
          if (p->requires_grad) {
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * n + off + j];
          }
          off += c;
        }
      },
      "concat_cols");
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result(
      {1, 1}, {s}, {x},
      [](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
      },
      "sum");
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Inner product of two equally shaped tensors.
inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

/// Single element as a scalar tensor.
inline Tensor pick(const Tensor& x, std::size_t r, std::size_t c) {
  if (r >= x.rows() || c >= x.cols()) throw DimensionError("pick: index out of range for " + x.shape().str());
  const std::size_t at = r * x.cols() + c;
  return detail::make_result(
      {1, 1}, {x.data()[at]}, {x},
      [at](detail::Node& self) { self.parents[0]->ensure_grad()[at] += self.grad[0]; }, "pick");
}

/// Sum of scalar tensors; a single node instead of a chain of adds.
inline Tensor add_scalars(std::span<const Tensor> xs) {
  if (xs.empty()) return Tensor::scalar(0.0);
  double s = 0.0;
  for (const auto& x : xs) s += x.item();
  return detail::make_result(
      {1, 1}, {s}, std::vector<Tensor>(xs.begin(), xs.end()),
      [](detail::Node& self) {
        for (auto& p : self.parents)
          if (p->requires_grad) p->ensure_grad()[0] += self.grad[0];
      },
      "add_scalars");
}

// ---------------------------------------------------------------------------
// Backward pass

/// Populates grad on every tensor reachable from loss that requires one, then
/// releases the recorded graph.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? loss.shape().str() : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (!n->parents.empty()) {
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

}  // namespace setident
