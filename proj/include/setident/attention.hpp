#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "setident/error.hpp"
#include "setident/nn.hpp"
#include "setident/tensor.hpp"

namespace setident {

/// Square boolean visibility matrix: at(q, k) is true when position q may attend to key k.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t size) : size_(size), bits_(size * size, 0) {}

  std::size_t size() const noexcept { return size_; }
  bool at(std::size_t q, std::size_t k) const { return bits_[q * size_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v = true) { bits_[q * size_ + k] = v ? 1 : 0; }

  std::size_t visible_in_row(std::size_t q) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < size_; ++k) n += bits_[q * size_ + k];
    return n;
  }

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Item-major layout of L history identifiers with M tokens each, then M query slots.
struct SequenceLayout {
  std::size_t items = 0;            // L
  std::size_t tokens_per_item = 0;  // M

  std::size_t history_length() const { return items * tokens_per_item; }
  std::size_t length() const { return history_length() + tokens_per_item; }
  bool is_query(std::size_t pos) const { return pos >= history_length(); }
  std::size_t item_of(std::size_t pos) const { return pos / tokens_per_item; }
};

/// Visibility of the set-identifier sequence: history tokens see every token
/// of earlier items and themselves but no sibling; query slots see the whole
/// history and themselves but no other query slot.
inline AttentionMask build_sparse_mask(std::size_t items, std::size_t tokens_per_item) {
  if (items == 0 || tokens_per_item == 0) {
    throw ContractError("build_sparse_mask: L and M must be >= 1 (got L=" + std::to_string(items) +
                        ", M=" + std::to_string(tokens_per_item) + ")");
  }
  const SequenceLayout layout{items, tokens_per_item};
  const std::size_t t = layout.length();
  const std::size_t h = layout.history_length();
  AttentionMask mask(t);
  for (std::size_t q = 0; q < t; ++q) {
    mask.set(q, q);
    if (layout.is_query(q)) {
      for (std::size_t k = 0; k < h; ++k) mask.set(q, k);
    } else {
      const std::size_t first_of_item = layout.item_of(q) * tokens_per_item;
      for (std::size_t k = 0; k < first_of_item; ++k) mask.set(q, k);
    }
  }
  return mask;
}

/// The unmodified causal mask over the flattened sequence: siblings and earlier
/// query slots are visible. Used by the "w/o SA" ablation.
inline AttentionMask build_flat_causal_mask(std::size_t items, std::size_t tokens_per_item) {
  if (items == 0 || tokens_per_item == 0) throw ContractError("build_flat_causal_mask: L and M must be >= 1");
  const SequenceLayout layout{items, tokens_per_item};
  AttentionMask mask(layout.length());
  for (std::size_t q = 0; q < layout.length(); ++q)
    for (std::size_t k = 0; k <= q; ++k) mask.set(q, k);
  return mask;
}

/// Lower-triangular (diagonal included) mask.
inline AttentionMask build_causal_mask(std::size_t length) {
  if (length == 0) throw ContractError("build_causal_mask: T must be >= 1");
  AttentionMask mask(length);
  for (std::size_t q = 0; q < length; ++q)
    for (std::size_t k = 0; k <= q; ++k) mask.set(q, k);
  return mask;
}

/// Extends a mask with all-false rows and columns for right padding.
inline AttentionMask pad_mask(const AttentionMask& mask, std::size_t padded) {
  if (padded < mask.size()) throw ContractError("pad_mask: padded length smaller than mask");
  AttentionMask out(padded);
  for (std::size_t q = 0; q < mask.size(); ++q)
    for (std::size_t k = 0; k < mask.size(); ++k) out.set(q, k, mask.at(q, k));
  return out;
}

struct EncoderConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_mult = 2;
  std::size_t max_seq = 256;
  std::size_t max_positions = 64;

  void validate() const {
    if (d == 0 || heads == 0 || ffn_mult == 0 || max_seq == 0 || max_positions == 0)
      throw ConfigError("encoder config: d, heads, ffn_mult, max_seq and max_positions must be >= 1");
    if (d % heads != 0)
      throw ConfigError("encoder config: d=" + std::to_string(d) + " not divisible by heads=" +
                        std::to_string(heads));
  }
};

/// Multiply-accumulate tallies for the attention sub-layers of one or more passes.
struct MacCounter {
  std::uint64_t projections = 0;  // Q, K, V and output projections
  std::uint64_t scores = 0;       // Q·Kᵀ
  std::uint64_t mixing = 0;       // softmax(..)·V
  std::uint64_t passes = 0;

  std::uint64_t total() const { return projections + scores + mixing; }
};

/// Closed-form attention MACs for one layer of a dense pass over T tokens.
inline MacCounter count_attention_macs(std::uint64_t t, std::uint64_t d, std::uint64_t heads) {
  const std::uint64_t head_dim = d / heads;
  MacCounter c;
  c.projections = 4 * t * d * d;
  c.scores = heads * t * t * head_dim;
  c.mixing = heads * t * t * head_dim;
  c.passes = 1;
  return c;
}

/// Optional instrumentation for one encode() call.
struct EncodeTrace {
  MacCounter* macs = nullptr;
  std::vector<Tensor>* attention = nullptr;  // per layer and head, row-stochastic [T×T]
};

/// Pre-norm transformer stack whose attention visibility is given entirely by a mask.
class Encoder {
 public:
  Encoder() = default;

  template <class Rng>
  Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    positions_ = Tensor::randn(cfg.max_positions, cfg.d, 0.1, rng, true);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      Block b;
      b.ln1_gain = Tensor::from(1, cfg.d, std::vector<double>(cfg.d, 1.0), true);
      b.ln1_bias = Tensor::zeros(1, cfg.d, true);
      b.q = Linear(cfg.d, cfg.d, rng);
      b.k = Linear(cfg.d, cfg.d, rng);
      b.v = Linear(cfg.d, cfg.d, rng);
      b.o = Linear(cfg.d, cfg.d, rng);
      b.ln2_gain = Tensor::from(1, cfg.d, std::vector<double>(cfg.d, 1.0), true);
      b.ln2_bias = Tensor::zeros(1, cfg.d, true);
      b.ff1 = Linear(cfg.d, cfg.d * cfg.ffn_mult, rng);
      b.ff2 = Linear(cfg.d * cfg.ffn_mult, cfg.d, rng);
      blocks_.push_back(std::move(b));
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  /// Hidden states for every position. Position ids index the learned position table.
  Tensor encode(const Tensor& embeddings, std::span<const std::size_t> positions,
                const AttentionMask& mask, EncodeTrace trace = {}) const {
    const std::size_t t = embeddings.rows();
    if (embeddings.cols() != cfg_.d)
      throw DimensionError("encode: embedding width " + std::to_string(embeddings.cols()) +
                           " != d=" + std::to_string(cfg_.d));
    if (t > cfg_.max_seq)
      throw DimensionError("encode: sequence length " + std::to_string(t) + " exceeds max_seq=" +
                           std::to_string(cfg_.max_seq));
    if (positions.size() != t)
      throw DimensionError("encode: " + std::to_string(positions.size()) + " position ids for " +
                           std::to_string(t) + " tokens");
    if (mask.size() != t)
      throw DimensionError("encode: mask size " + std::to_string(mask.size()) + " != sequence length " +
                           std::to_string(t));
    for (std::size_t p : positions)
      if (p >= cfg_.max_positions)
        throw DimensionError("encode: position id " + std::to_string(p) + " >= max_positions");

    passes_.fetch_add(1, std::memory_order_relaxed);
    if (trace.macs) ++trace.macs->passes;

    Tensor h = add(embeddings, gather_rows(positions_, positions));
    if (blocks_.empty()) return h;

    std::vector<double> bias(t * t);
    for (std::size_t q = 0; q < t; ++q)
      for (std::size_t k = 0; k < t; ++k) bias[q * t + k] = mask.at(q, k) ? 0.0 : kMaskedLogit;
    const Tensor mask_bias = Tensor::from(t, t, std::move(bias));

    const std::size_t head_dim = cfg_.d / cfg_.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (const auto& b : blocks_) {
      const Tensor x = layer_norm(h, b.ln1_gain, b.ln1_bias);
      const Tensor q = b.q(x), k = b.k(x), v = b.v(x);
      std::vector<Tensor> heads;
      heads.reserve(cfg_.heads);
      for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
        const Tensor qh = slice_cols(q, hd * head_dim, head_dim);
        const Tensor kh = slice_cols(k, hd * head_dim, head_dim);
        const Tensor vh = slice_cols(v, hd * head_dim, head_dim);
        const Tensor weights = softmax_rows(add(scale(matmul_nt(qh, kh), inv_sqrt), mask_bias));
        if (trace.attention) trace.attention->push_back(weights);
        heads.push_back(matmul(weights, vh));
      }
      h = add(h, b.o(concat_cols(heads)));
      if (trace.macs) {
        const MacCounter c = count_attention_macs(t, cfg_.d, cfg_.heads);
        trace.macs->projections += c.projections;
        trace.macs->scores += c.scores;
        trace.macs->mixing += c.mixing;
      }
      const Tensor y = layer_norm(h, b.ln2_gain, b.ln2_bias);
      h = add(h, b.ff2(relu(b.ff1(y))));
    }
    return h;
  }

  /// Number of encode() calls made on this instance.
  std::uint64_t passes() const { return passes_.load(std::memory_order_relaxed); }
  void reset_passes() const { passes_.store(0, std::memory_order_relaxed); }

  ParameterList parameters() const {
    ParameterList out{{"positions", positions_}};
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      out.push_back({p + "ln1.gain", b.ln1_gain});
      out.push_back({p + "ln1.bias", b.ln1_bias});
      append_prefixed(out, p + "q.", b.q.parameters());
      append_prefixed(out, p + "k.", b.k.parameters());
      append_prefixed(out, p + "v.", b.v.parameters());
      append_prefixed(out, p + "o.", b.o.parameters());
      out.push_back({p + "ln2.gain", b.ln2_gain});
      out.push_back({p + "ln2.bias", b.ln2_bias});
      append_prefixed(out, p + "ff1.", b.ff1.parameters());
      append_prefixed(out, p + "ff2.", b.ff2.parameters());
    }
    return out;
  }

  static constexpr double kMaskedLogit = -1e30;

 private:
  struct Block {
    Tensor ln1_gain, ln1_bias;
    Linear q, k, v, o;
    Tensor ln2_gain, ln2_bias;
    Linear ff1, ff2;
  };

  EncoderConfig cfg_;
  Tensor positions_;
  std::vector<Block> blocks_;
  mutable std::atomic<std::uint64_t> passes_{0};

 public:
  Encoder(const Encoder& o) : cfg_(o.cfg_), positions_(o.positions_), blocks_(o.blocks_), passes_(o.passes()) {}
  Encoder& operator=(const Encoder& o) {
    cfg_ = o.cfg_;
    positions_ = o.positions_;
    blocks_ = o.blocks_;
    passes_.store(o.passes());
    return *this;
  }
  Encoder(Encoder&& o) noexcept
      : cfg_(o.cfg_), positions_(std::move(o.positions_)), blocks_(std::move(o.blocks_)), passes_(o.passes()) {}
  Encoder& operator=(Encoder&& o) noexcept {
    cfg_ = o.cfg_;
    positions_ = std::move(o.positions_);
    blocks_ = std::move(o.blocks_);
    passes_.store(o.passes());
    return *this;
  }
};

}  // namespace setident
