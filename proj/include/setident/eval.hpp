#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "setident/attention.hpp"
#include "setident/data.hpp"
#include "setident/error.hpp"
#include "setident/generator.hpp"
#include "setident/training.hpp"

namespace setident {

// ---------------------------------------------------------------------------
// Metrics for a single relevant item

inline double recall_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0) throw ContractError("recall_at_k: rank is 1-based");
  return rank <= k ? 1.0 : 0.0;
}

inline double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank == 0) throw ContractError("ndcg_at_k: rank is 1-based");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

/// 1-based position of target under the rank_topk ordering (score desc, id asc).
inline std::size_t target_rank(std::span<const ItemScore> scores, const std::string& target) {
  const auto it = std::find_if(scores.begin(), scores.end(), [&](const ItemScore& s) { return s.item == target; });
  if (it == scores.end()) throw ContractError("target_rank: target '" + target + "' not among candidates");
  std::size_t rank = 1;
  for (const auto& s : scores)
    if (s.score > it->score || (s.score == it->score && s.item < target)) ++rank;
  return rank;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class Setting { all, warm, cold };

inline std::string to_string(Setting s) {
  switch (s) {
    case Setting::all: return "all";
    case Setting::warm: return "warm";
    case Setting::cold: return "cold";
  }
  return "?";
}

inline Setting parse_setting(const std::string& s) {
  if (s == "all") return Setting::all;
  if (s == "warm") return Setting::warm;
  if (s == "cold") return Setting::cold;
  throw ContractError("unknown evaluation setting '" + s + "' (expected all, warm or cold)");
}

struct EvalInstance {
  std::string user;
  std::vector<std::string> history;
  std::string target;
};

/// Every test interaction is one instance; its history is everything before
/// it (most recent max_history items). Warm/cold settings keep only targets
/// of that kind.
inline std::vector<EvalInstance> test_instances(const Dataset& ds, Setting setting, std::size_t max_history) {
  std::vector<EvalInstance> out;
  for (const auto& u : ds.users) {
    const std::size_t first_test = u.split.train + u.split.val;
    for (std::size_t t = first_test; t < u.events.size(); ++t) {
      const std::string& target = u.events[t].item_id;
      if (setting == Setting::warm && !ds.items.is_warm(target)) continue;
      if (setting == Setting::cold && !ds.items.is_cold(target)) continue;
      EvalInstance inst{u.user_id, {}, target};
      for (std::size_t j = t > max_history ? t - max_history : 0; j < t; ++j) inst.history.push_back(u.events[j].item_id);
      out.push_back(std::move(inst));
    }
  }
  return out;
}

inline const std::vector<std::string>& candidate_items(const Dataset& ds, Setting setting) {
  switch (setting) {
    case Setting::warm: return ds.items.warm;
    case Setting::cold: return ds.items.cold;
    default: return ds.catalog;
  }
}

struct MetricValue {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t count = 0;
};

struct MetricsReport {
  std::string setting;
  double beta = 0.0;
  std::size_t instances = 0;
  std::map<std::size_t, MetricValue> at_k;        // K → metrics
  std::map<std::size_t, MetricValue> by_group;    // popularity group → recall/ndcg@group_k
  std::size_t group_k = 10;
};

struct EvalOptions {
  std::vector<std::size_t> ks{5, 10};
  std::size_t group_k = 10;
  std::size_t workers = 1;
};

/// Scores each instance with scorer(instance) → candidate scores, ranks the
/// target and averages the metrics. Worker threads split instances into
/// contiguous chunks; results are reduced in instance order.
template <class Scorer>
MetricsReport evaluate_instances(std::span<const EvalInstance> instances, Scorer&& scorer, const EvalOptions& opt,
                                 const std::map<std::string, std::size_t>* groups = nullptr) {
  const std::size_t n = instances.size();
  std::vector<std::size_t> ranks(n, 0);
  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers, n));
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::vector<ItemScore> scores = scorer(instances[i]);
      ranks[i] = target_rank(scores, instances[i].target);
    }
  };
  if (workers == 1) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, std::min(n, w * chunk), std::min(n, (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }

  MetricsReport r;
  r.instances = n;
  r.group_k = opt.group_k;
  for (std::size_t k : opt.ks) r.at_k[k] = {0.0, 0.0, n};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k : opt.ks) {
      r.at_k[k].recall += recall_at_k(ranks[i], k);
      r.at_k[k].ndcg += ndcg_at_k(ranks[i], k);
    }
    if (groups) {
      const auto g = groups->find(instances[i].target);
      if (g != groups->end()) {
        auto& m = r.by_group[g->second];
        m.recall += recall_at_k(ranks[i], opt.group_k);
        m.ndcg += ndcg_at_k(ranks[i], opt.group_k);
        ++m.count;
      }
    }
  }
  for (auto& [k, m] : r.at_k) {
    if (n == 0) continue;
    m.recall /= static_cast<double>(n);
    m.ndcg /= static_cast<double>(n);
  }
  for (auto& [g, m] : r.by_group) {
    m.recall /= static_cast<double>(m.count);
    m.ndcg /= static_cast<double>(m.count);
  }
  return r;
}

/// Test-split evaluation of a trained model for one candidate setting.
inline MetricsReport evaluate(const SetRecModel& model, const TokenCorpus& corpus, const Dataset& ds, Setting setting,
                              double beta, const EvalOptions& opt = {}) {
  const auto instances = test_instances(ds, setting, model.config().max_history);
  const auto& candidates = candidate_items(ds, setting);
  MetricsReport r = evaluate_instances(
      instances, [&](const EvalInstance& inst) { return model.score(inst.history, corpus, beta, &candidates); }, opt,
      setting == Setting::warm ? &ds.groups : nullptr);
  r.setting = to_string(setting);
  r.beta = beta;
  return r;
}

/// One CSV row per (setting, K) plus one per popularity group.
inline void write_report_csv(std::ostream& out, std::span<const MetricsReport> reports, bool header = true) {
  if (header) out << "setting,beta,k,group,recall,ndcg,count\n";
  for (const auto& r : reports) {
    for (const auto& [k, m] : r.at_k)
      out << r.setting << ',' << format_double(r.beta) << ',' << k << ",all," << format_double(m.recall) << ','
          << format_double(m.ndcg) << ',' << m.count << '\n';
    for (const auto& [g, m] : r.by_group)
      out << r.setting << ',' << format_double(r.beta) << ',' << r.group_k << ",G" << g << ','
          << format_double(m.recall) << ',' << format_double(m.ndcg) << ',' << m.count << '\n';
  }
}

inline void write_report_summary(std::ostream& out, std::span<const MetricsReport> reports) {
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "setting=%s beta=%.3g instances=%zu\n", r.setting.c_str(), r.beta, r.instances);
    out << buf;
    for (const auto& [k, m] : r.at_k) {
      std::snprintf(buf, sizeof buf, "  Recall@%-3zu %.4f   NDCG@%-3zu %.4f\n", k, m.recall, k, m.ndcg);
      out << buf;
    }
    for (const auto& [g, m] : r.by_group) {
      std::snprintf(buf, sizeof buf, "  G%zu (n=%zu)  Recall@%zu %.4f   NDCG@%zu %.4f\n", g, m.count, r.group_k, m.recall,
                    r.group_k, m.ndcg);
      out << buf;
    }
  }
  out << "Each test interaction counts as one instance (hit-rate style recall).\n";
}

// ---------------------------------------------------------------------------
// Simultaneous vs per-dimension generation cost

struct BenchResult {
  std::size_t items = 0;  // L
  std::size_t tokens = 0; // M
  std::size_t d = 0;
  std::uint64_t flattened_macs = 0;
  std::uint64_t original_macs = 0;
  std::uint64_t flattened_calls = 0;
  std::uint64_t original_calls = 0;

  double ratio() const { return static_cast<double>(original_macs) / static_cast<double>(flattened_macs); }
};

/// Runs both schemes through an instrumented encoder: one pass over L·M+M
/// tokens with the sparse mask, versus M passes over L·M+1 tokens (causal
/// history plus one query) as an autoregressive-style decoder would need.
inline BenchResult bench_generation(std::size_t items, std::size_t tokens, std::size_t d, std::size_t heads = 4,
                                    std::size_t layers = 1, std::uint64_t seed = 1) {
  if (items == 0 || tokens == 0 || d == 0) throw ContractError("bench_generation: L, M and d must be >= 1");
  std::mt19937_64 rng(seed);
  const std::size_t h = items * tokens;
  const Encoder encoder(EncoderConfig{d, heads, layers, 2, h + tokens, items + 1}, rng);
  const Tensor history = Tensor::randn(h, d, 1.0, rng);
  const Tensor queries = Tensor::randn(tokens, d, 1.0, rng);
  NoGradGuard no_grad;

  BenchResult r{items, tokens, d};
  MacCounter flat;
  {
    const std::vector<Tensor> parts{history, queries};
    encoder.encode(concat_rows(parts), set_positions(items, tokens), build_sparse_mask(items, tokens), {&flat, nullptr});
  }
  MacCounter orig;
  std::vector<std::size_t> positions = set_positions(items, tokens);
  positions.resize(h + 1);
  const AttentionMask causal = build_causal_mask(h + 1);
  for (std::size_t k = 0; k < tokens; ++k) {
    const std::vector<Tensor> parts{history, slice_rows(queries, k, 1)};
    encoder.encode(concat_rows(parts), positions, causal, {&orig, nullptr});
  }
  r.flattened_macs = flat.total();
  r.original_macs = orig.total();
  r.flattened_calls = flat.passes;
  r.original_calls = orig.passes;
  return r;
}

inline void write_bench_csv(std::ostream& out, std::span<const BenchResult> rows) {
  out << "L,M,d,flattened_macs,original_macs,ratio,flattened_calls,original_calls\n";
  for (const auto& r : rows)
    out << r.items << ',' << r.tokens << ',' << r.d << ',' << r.flattened_macs << ',' << r.original_macs << ','
        << format_double(r.ratio()) << ',' << r.flattened_calls << ',' << r.original_calls << '\n';
}

// ---------------------------------------------------------------------------
// Token-sequence baseline: beam search vs exhaustive search

/// Autoregressive conditional tables p(token | prefix) over a fixed length.
class BaselineDecoder {
 public:
  BaselineDecoder(std::size_t vocab, std::size_t length) : vocab_(vocab), length_(length) {
    if (vocab == 0 || length == 0) throw ContractError("BaselineDecoder: |V| and T must be >= 1");
    std::size_t count = 1;
    for (std::size_t t = 0; t < length; ++t) {
      offsets_.push_back(tables_.size() / vocab_);
      tables_.resize(tables_.size() + count * vocab_, 1.0 / static_cast<double>(vocab_));
      count *= vocab_;
    }
  }

  /// Peaked random conditionals: softmax of Gaussian logits scaled by temperature.
  static BaselineDecoder random(std::size_t vocab, std::size_t length, std::uint64_t seed, double spread = 2.0) {
    BaselineDecoder dec(vocab, length);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> logit(0.0, spread);
    std::vector<double> p(vocab);
    for (std::size_t row = 0; row < dec.tables_.size() / vocab; ++row) {
      double s = 0.0;
      for (auto& x : p) s += (x = std::exp(logit(rng)));
      for (std::size_t v = 0; v < vocab; ++v) dec.tables_[row * vocab + v] = p[v] / s;
    }
    return dec;
  }

  std::size_t vocab() const { return vocab_; }
  std::size_t length() const { return length_; }

  std::span<const double> next(std::span<const std::size_t> prefix) const {
    return std::span(tables_).subspan(row_of(prefix) * vocab_, vocab_);
  }

  /// Overwrites p(· | prefix); values must be nonnegative and sum to 1.
  void set(std::span<const std::size_t> prefix, std::span<const double> probs) {
    if (probs.size() != vocab_) throw DimensionError("BaselineDecoder::set: expected |V| probabilities");
    const double s = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-12) throw ContractError("BaselineDecoder::set: probabilities must sum to 1");
    std::copy(probs.begin(), probs.end(), tables_.begin() + static_cast<std::ptrdiff_t>(row_of(prefix) * vocab_));
  }

  double probability(std::span<const std::size_t> seq) const {
    double p = 1.0;
    for (std::size_t t = 0; t < seq.size(); ++t) p *= next(seq.first(t))[seq[t]];
    return p;
  }

 private:
  std::size_t row_of(std::span<const std::size_t> prefix) const {
    if (prefix.size() >= length_) throw ContractError("BaselineDecoder: prefix too long");
    std::size_t code = 0;
    for (std::size_t t : prefix) {
      if (t >= vocab_) throw ContractError("BaselineDecoder: token out of range");
      code = code * vocab_ + t;
    }
    return offsets_[prefix.size()] + code;
  }

  std::size_t vocab_;
  std::size_t length_;
  std::vector<std::size_t> offsets_;  // first table row for each prefix length
  std::vector<double> tables_;
};

struct ScoredSequence {
  std::vector<std::size_t> tokens;
  double prob = 0.0;

  bool operator==(const ScoredSequence&) const = default;
};

inline bool sequence_before(const ScoredSequence& a, const ScoredSequence& b) {
  return a.prob != b.prob ? a.prob > b.prob : a.tokens < b.tokens;
}

/// Keeps the K most probable prefixes after every step.
inline std::vector<ScoredSequence> beam_search(const BaselineDecoder& dec, std::size_t beam) {
  if (beam == 0) throw ContractError("beam_search: K must be >= 1");
  std::vector<ScoredSequence> beams{{{}, 1.0}};
  for (std::size_t t = 0; t < dec.length(); ++t) {
    std::vector<ScoredSequence> cand;
    cand.reserve(beams.size() * dec.vocab());
    for (const auto& b : beams) {
      const auto p = dec.next(b.tokens);
      for (std::size_t v = 0; v < dec.vocab(); ++v) {
        ScoredSequence s{b.tokens, b.prob * p[v]};
        s.tokens.push_back(v);
        cand.push_back(std::move(s));
      }
    }
    const std::size_t keep = std::min(beam, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), sequence_before);
    cand.resize(keep);
    beams = std::move(cand);
  }
  return beams;
}

constexpr std::size_t kMaxGlobalSearch = 1'000'000;

/// Every length-T sequence with its probability, most probable first.
inline std::vector<ScoredSequence> global_search(const BaselineDecoder& dec) {
  std::size_t total = 1;
  for (std::size_t t = 0; t < dec.length(); ++t) {
    if (total > kMaxGlobalSearch / dec.vocab())
      throw ContractError("global_search: |V|^T exceeds " + std::to_string(kMaxGlobalSearch));
    total *= dec.vocab();
  }
  std::vector<ScoredSequence> out;
  out.reserve(total);
  std::vector<std::size_t> seq(dec.length(), 0);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t t = dec.length(); t-- > 0;) {
      seq[t] = c % dec.vocab();
      c /= dec.vocab();
    }
    out.push_back({seq, dec.probability(seq)});
  }
  std::sort(out.begin(), out.end(), sequence_before);
  return out;
}

struct BeamDemoRow {
  std::size_t beam = 0;
  double beam_recall = 0.0;    // Recall@1 against the most probable sequence
  double global_recall = 0.0;
  std::size_t misses = 0;      // decoders where the beam's top-1 is not the global top-1
};

/// Recall@1 of beam search vs exhaustive search over seeded random decoders.
inline std::vector<BeamDemoRow> beam_vs_global(std::size_t decoders, std::size_t vocab, std::size_t length,
                                               std::span<const std::size_t> beams, std::uint64_t seed = 1) {
  std::vector<BeamDemoRow> rows;
  for (std::size_t k : beams) rows.push_back({k, 0.0, 0.0, 0});
  for (std::size_t i = 0; i < decoders; ++i) {
    const auto dec = BaselineDecoder::random(vocab, length, seed + i);
    const auto best = global_search(dec).front();
    for (auto& row : rows) {
      const bool hit = beam_search(dec, row.beam).front().tokens == best.tokens;
      row.beam_recall += hit ? 1.0 : 0.0;
      row.global_recall += 1.0;
      row.misses += hit ? 0 : 1;
    }
  }
  for (auto& row : rows) {
    row.beam_recall /= static_cast<double>(decoders);
    row.global_recall /= static_cast<double>(decoders);
  }
  return rows;
}

}  // namespace setident
