#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "setident/attention.hpp"
#include "setident/error.hpp"
#include "setident/tensor.hpp"
#include "setident/tokenizer.hpp"

namespace setident {

enum class MaskKind { sparse, flat_causal };

inline AttentionMask build_mask(MaskKind kind, std::size_t items, std::size_t tokens_per_item) {
  return kind == MaskKind::sparse ? build_sparse_mask(items, tokens_per_item)
                                  : build_flat_causal_mask(items, tokens_per_item);
}

/// One learnable query vector per information dimension, rows in canonical order.
class QuerySet {
 public:
  QuerySet() = default;

  template <class Rng>
  QuerySet(TokenLayout layout, std::size_t d, Rng& rng, bool trainable = true)
      : layout_(layout), vectors_(Tensor::randn(layout.size(), d, 1.0, rng, trainable)) {
    if (layout.size() == 0) throw ConfigError("QuerySet: layout has no dimensions");
  }

  QuerySet(TokenLayout layout, Tensor vectors) : layout_(layout), vectors_(std::move(vectors)) {
    if (vectors_.rows() != layout_.size())
      throw DimensionError("QuerySet: " + std::to_string(vectors_.rows()) + " vectors for " +
                           std::to_string(layout_.size()) + " dimensions");
  }

  const TokenLayout& layout() const { return layout_; }
  std::size_t size() const { return layout_.size(); }
  std::size_t dim() const { return vectors_.cols(); }
  const Tensor& vectors() const { return vectors_; }
  bool trainable() const { return vectors_.requires_grad(); }

 private:
  TokenLayout layout_;
  Tensor vectors_;
};

/// Item-major history tokens followed by the query vectors.
struct FlatSequence {
  Tensor embeddings;
  std::vector<std::size_t> positions;
  AttentionMask mask;
  SequenceLayout layout;
};

/// All tokens of history item ℓ share position ℓ; every query slot uses position L.
inline std::vector<std::size_t> set_positions(std::size_t items, std::size_t tokens_per_item) {
  std::vector<std::size_t> pos;
  pos.reserve((items + 1) * tokens_per_item);
  for (std::size_t l = 0; l <= items; ++l)
    for (std::size_t m = 0; m < tokens_per_item; ++m) pos.push_back(l);
  return pos;
}

inline FlatSequence flatten_history(std::span<const SetIdentifier> history, const QuerySet& queries,
                                    MaskKind kind = MaskKind::sparse) {
  if (history.empty()) throw ContractError("flatten_history: empty history");
  const std::size_t m = queries.size();
  std::vector<Tensor> parts;
  parts.reserve(history.size() * m + 1);
  for (const auto& id : history) {
    if (id.z_cf.defined() != queries.layout().cf || id.z_sem.size() != queries.layout().n_sem)
      throw DataError("flatten_history: identifier '" + id.item_id + "' has " + std::to_string(id.z_sem.size()) +
                      " semantic tokens" + (id.z_cf.defined() ? " and a CF token" : "") +
                      ", queries expect N=" + std::to_string(queries.layout().n_sem) +
                      (queries.layout().cf ? " with CF" : " without CF"));
    for (auto& t : id.tokens()) parts.push_back(t);
  }
  parts.push_back(queries.vectors());
  const SequenceLayout layout{history.size(), m};
  return {concat_rows(parts), set_positions(history.size(), m), build_mask(kind, history.size(), m), layout};
}

/// Same layout as flatten_history, gathered from a stacked token table.
/// table_rows[ℓ][k] is the row of history item ℓ's token for dimension k.
inline FlatSequence flatten_from_table(const Tensor& stacked, std::span<const std::vector<std::size_t>> table_rows,
                                       std::size_t query_offset, std::size_t m, MaskKind kind = MaskKind::sparse) {
  if (table_rows.empty()) throw ContractError("flatten_history: empty history");
  std::vector<std::size_t> idx;
  idx.reserve((table_rows.size() + 1) * m);
  for (const auto& item : table_rows) {
    if (item.size() != m) throw DataError("flatten_history: token count mismatch");
    idx.insert(idx.end(), item.begin(), item.end());
  }
  for (std::size_t k = 0; k < m; ++k) idx.push_back(query_offset + k);
  const SequenceLayout layout{table_rows.size(), m};
  return {gather_rows(stacked, idx), set_positions(table_rows.size(), m), build_mask(kind, table_rows.size(), m),
          layout};
}

/// Tokens read from the query slots, one row per dimension in canonical order.
struct GeneratedSet {
  TokenLayout layout;
  Tensor tokens;  // [M×d]

  Tensor token(std::size_t k) const { return slice_rows(tokens, k, 1); }
  std::vector<double> values(std::size_t k) const { return tokens.row_values(k); }
};

inline GeneratedSet read_query_slots(const Tensor& hidden, const SequenceLayout& layout, const TokenLayout& tokens) {
  return {tokens, slice_rows(hidden, layout.history_length(), layout.tokens_per_item)};
}

/// One encoder pass produces every dimension's token.
inline GeneratedSet generate_set(std::span<const SetIdentifier> history, const QuerySet& queries,
                                 const Encoder& encoder, MaskKind kind = MaskKind::sparse, EncodeTrace trace = {}) {
  const FlatSequence flat = flatten_history(history, queries, kind);
  const Tensor hidden = encoder.encode(flat.embeddings, flat.positions, flat.mask, trace);
  return read_query_slots(hidden, flat.layout, queries.layout());
}

// ---------------------------------------------------------------------------
// Grounding

enum class Similarity { inner, cosine };

struct GroundingOptions {
  Similarity sim = Similarity::inner;
  bool average_semantic = false;
};

struct ItemScore {
  std::string item;
  double score = 0.0;
};

inline double similarity(std::span<const double> a, std::span<const double> b, Similarity sim) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  if (sim == Similarity::inner) return s;
  double na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  return s / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
}

/// Per-dimension scores s_k = W_k·ẑ_k blended as (1−β)·s_CF + β·Σ_sem s_k.
/// With a candidate filter, only listed items are scored (in corpus order).
inline std::vector<ItemScore> ground_scores(const GeneratedSet& gen, const TokenCorpus& corpus, double beta,
                                            const std::vector<std::string>* candidates = nullptr,
                                            const GroundingOptions& opt = {}) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("ground_scores: beta must lie in [0, 1]");
  if (!(gen.layout == corpus.layout()))
    throw DimensionError("ground_scores: generated set and corpus have different dimensions");
  if (gen.tokens.cols() != corpus.dim()) throw DimensionError("ground_scores: token width mismatch");

  std::vector<std::size_t> rows;
  if (candidates) {
    rows.reserve(candidates->size());
    for (const auto& c : *candidates) rows.push_back(corpus.index_of(c));
    std::sort(rows.begin(), rows.end());
  } else {
    rows.resize(corpus.items().size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }

  const std::size_t m = gen.layout.size();
  std::vector<std::vector<double>> query(m);
  for (std::size_t k = 0; k < m; ++k) query[k] = gen.values(k);
  const bool has_cf = gen.layout.cf;
  const std::size_t first_sem = has_cf ? 1 : 0;
  // β only mixes when both kinds of dimension exist (ablated layouts use the remaining kind at full weight).
  const bool has_sem = gen.layout.n_sem > 0;
  const double cf_weight = has_sem ? 1.0 - beta : 1.0;
  const double sem_weight = (has_cf ? beta : 1.0) * (opt.average_semantic && has_sem ? 1.0 / gen.layout.n_sem : 1.0);

  std::vector<ItemScore> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) {
    double s = 0.0;
    if (has_cf) s += cf_weight * similarity(corpus.token(0, i), query[0], opt.sim);
    double sem = 0.0;
    for (std::size_t k = first_sem; k < m; ++k) sem += similarity(corpus.token(k, i), query[k], opt.sim);
    s += sem_weight * sem;
    out.push_back({corpus.items()[i], s});
  }
  return out;
}

/// Highest scores first; equal scores ordered by ascending item id.
inline std::vector<std::string> rank_topk(std::span<const ItemScore> scores, std::size_t k) {
  if (k == 0) throw ContractError("rank_topk: K must be >= 1");
  std::vector<const ItemScore*> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.push_back(&s);
  const std::size_t n = std::min(k, order.size());
  auto before = [](const ItemScore* a, const ItemScore* b) {
    return a->score != b->score ? a->score > b->score : a->item < b->item;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), before);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(order[i]->item);
  return out;
}

}  // namespace setident
