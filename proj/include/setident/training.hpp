#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "setident/attention.hpp"
#include "setident/data.hpp"
#include "setident/error.hpp"
#include "setident/generator.hpp"
#include "setident/nn.hpp"
#include "setident/tensor.hpp"
#include "setident/tokenizer.hpp"

namespace setident {

struct TrainConfig {
  // tokens
  std::size_t n_sem = 2;
  std::size_t d = 64;
  std::size_t d_sem = 0;  // filled from the data when 0
  std::vector<std::size_t> ae_hidden{512, 256, 128};
  // encoder
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_mult = 2;
  std::size_t max_history = 20;
  // objective and inference
  double alpha = 0.5;
  double beta = 0.5;
  Similarity sim = Similarity::inner;
  bool average_semantic = false;
  std::size_t sampled_negatives = 0;  // 0 = full corpus softmax
  // optimization
  double lr = 1e-3;
  double grad_clip = 1.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  // ablations
  bool disable_semantic = false;
  bool disable_cf = false;
  bool frozen_random_queries = false;
  bool full_attention_mask = false;

  TokenLayout layout() const { return {!disable_cf, disable_semantic ? 0 : n_sem}; }
  MaskKind mask_kind() const { return full_attention_mask ? MaskKind::flat_causal : MaskKind::sparse; }

  EncoderConfig encoder_config() const {
    const std::size_t m = layout().size();
    return {d, heads, layers, ffn_mult, (max_history + 1) * m, max_history + 1};
  }

  void validate() const {
    if (disable_cf && disable_semantic) throw ConfigError("at least one of the CF and semantic dimensions is required");
    if (!disable_semantic && n_sem == 0) throw ConfigError("n_sem must be >= 1 unless semantic tokens are disabled");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (batch_size == 0 || max_history == 0) throw ConfigError("batch_size and max_history must be >= 1");
    encoder_config().validate();
  }

  /// Canonical key=value text, one key per line in sorted order.
  std::string to_text() const {
    std::map<std::string, std::string> kv;
    auto num = [](auto v) { return std::to_string(v); };
    kv["n_sem"] = num(n_sem);
    kv["d"] = num(d);
    kv["d_sem"] = num(d_sem);
    std::string hidden;
    for (std::size_t i = 0; i < ae_hidden.size(); ++i) hidden += (i ? "," : "") + num(ae_hidden[i]);
    kv["ae_hidden"] = hidden;
    kv["heads"] = num(heads);
    kv["layers"] = num(layers);
    kv["ffn_mult"] = num(ffn_mult);
    kv["max_history"] = num(max_history);
    kv["alpha"] = format_double(alpha);
    kv["beta"] = format_double(beta);
    kv["sim"] = sim == Similarity::inner ? "inner" : "cosine";
    kv["average_semantic"] = average_semantic ? "1" : "0";
    kv["sampled_negatives"] = num(sampled_negatives);
    kv["lr"] = format_double(lr);
    kv["grad_clip"] = format_double(grad_clip);
    kv["epochs"] = num(epochs);
    kv["batch_size"] = num(batch_size);
    kv["seed"] = num(seed);
    kv["disable_semantic"] = disable_semantic ? "1" : "0";
    kv["disable_cf"] = disable_cf ? "1" : "0";
    kv["frozen_random_queries"] = frozen_random_queries ? "1" : "0";
    kv["full_attention_mask"] = full_attention_mask ? "1" : "0";
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("config: expected key=value, got '" + line + "'");
      c.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    auto as_size = [&] {
      std::int64_t v;
      if (!detail::parse_int64(value, v) || v < 0) throw ConfigError("config: bad integer for " + key + ": " + value);
      return static_cast<std::size_t>(v);
    };
    auto as_double = [&] {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw ConfigError("");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + value);
      }
    };
    auto as_bool = [&] {
      if (value == "1" || value == "true") return true;
      if (value == "0" || value == "false") return false;
      throw ConfigError("config: bad boolean for " + key + ": " + value);
    };
    if (key == "n_sem") n_sem = as_size();
    else if (key == "d") d = as_size();
    else if (key == "d_sem") d_sem = as_size();
    else if (key == "ae_hidden") {
      ae_hidden.clear();
      std::istringstream parts(value);
      std::string p;
      while (std::getline(parts, p, ',')) {
        std::int64_t v;
        if (!detail::parse_int64(p, v) || v <= 0) throw ConfigError("config: bad ae_hidden entry " + p);
        ae_hidden.push_back(static_cast<std::size_t>(v));
      }
    } else if (key == "heads") heads = as_size();
    else if (key == "layers") layers = as_size();
    else if (key == "ffn_mult") ffn_mult = as_size();
    else if (key == "max_history") max_history = as_size();
    else if (key == "alpha") alpha = as_double();
    else if (key == "beta") beta = as_double();
    else if (key == "sim") {
      if (value == "inner") sim = Similarity::inner;
      else if (value == "cosine") sim = Similarity::cosine;
      else throw ConfigError("config: sim must be inner or cosine");
    } else if (key == "average_semantic") average_semantic = as_bool();
    else if (key == "sampled_negatives") sampled_negatives = as_size();
    else if (key == "lr") lr = as_double();
    else if (key == "grad_clip") grad_clip = as_double();
    else if (key == "epochs") epochs = as_size();
    else if (key == "batch_size") batch_size = as_size();
    else if (key == "seed") seed = as_size();
    else if (key == "disable_semantic") disable_semantic = as_bool();
    else if (key == "disable_cf") disable_cf = as_bool();
    else if (key == "frozen_random_queries") frozen_random_queries = as_bool();
    else if (key == "full_attention_mask") full_attention_mask = as_bool();
    else throw ConfigError("config: unknown key '" + key + "'");
  }
};

// ---------------------------------------------------------------------------
// Losses

/// Σ_k −log softmax_z(sim(ẑ_k, z))[target_k] over each dimension's token table.
/// generated is [M×d]; tables[k] is [R_k×d]; target_rows[k] indexes tables[k].
inline Tensor gen_loss_tables(const Tensor& generated, std::span<const Tensor> tables,
                              std::span<const std::size_t> target_rows, Similarity sim = Similarity::inner,
                              std::size_t sampled_negatives = 0, std::mt19937_64* rng = nullptr) {
  if (tables.size() != generated.rows() || target_rows.size() != tables.size())
    throw DimensionError("gen_loss: " + std::to_string(generated.rows()) + " generated tokens, " +
                         std::to_string(tables.size()) + " tables, " + std::to_string(target_rows.size()) + " targets");
  std::vector<Tensor> terms;
  terms.reserve(tables.size());
  for (std::size_t k = 0; k < tables.size(); ++k) {
    Tensor table = tables[k];
    std::size_t target = target_rows[k];
    if (target >= table.rows()) throw DataError("gen_loss: target row out of range for dimension " + std::to_string(k));
    if (sampled_negatives > 0 && sampled_negatives + 1 < table.rows()) {
      if (!rng) throw ContractError("gen_loss: sampled softmax needs a random generator");
      std::vector<std::size_t> rows{target};
      std::uniform_int_distribution<std::size_t> pick(0, table.rows() - 2);
      for (std::size_t s = 0; s < sampled_negatives; ++s) {
        const std::size_t r = pick(*rng);
        rows.push_back(r >= target ? r + 1 : r);
      }
      table = gather_rows(table, rows);
      target = 0;
    }
    Tensor query = slice_rows(generated, k, 1);
    if (sim == Similarity::cosine) {
      query = normalize_rows(query);
      table = normalize_rows(table);
    }
    const Tensor log_probs = log_softmax_rows(matmul_nt(query, table));
    terms.push_back(scale(pick(log_probs, 0, target), -1.0));
  }
  return add_scalars(terms);
}

/// Generation loss of one generated set against a target item of a built corpus.
inline Tensor gen_loss(const GeneratedSet& gen, const std::string& target, const TokenCorpus& corpus,
                       Similarity sim = Similarity::inner) {
  if (!(gen.layout == corpus.layout())) throw DimensionError("gen_loss: generated set and corpus dimensions differ");
  const auto item = corpus.find(target);
  const auto tags = corpus.layout().tags();
  if (!item) throw DataError("gen_loss: target item '" + target + "' missing from corpus dimension " + tags.front());
  std::vector<Tensor> tables;
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < corpus.dimensions().size(); ++k) {
    tables.push_back(corpus.dimension(k).tensor());
    rows.push_back(corpus.row_in(k, *item));
  }
  return gen_loss_tables(gen.tokens, tables, rows, sim);
}

/// l_gen + α·l_ae; an undefined l_ae contributes nothing.
inline Tensor total_loss(const Tensor& l_gen, const Tensor& l_ae, double alpha) {
  if (alpha < 0.0) throw ContractError("total_loss: alpha must be >= 0");
  if (!l_ae.defined()) return l_gen;
  return add(l_gen, scale(l_ae, alpha));
}

// ---------------------------------------------------------------------------
// Model

/// Encoder, query vectors and both tokenizers, with their configuration.
class SetRecModel {
 public:
  SetRecModel(const TrainConfig& cfg, const CfTable* cf_base) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    encoder_ = std::make_shared<Encoder>(cfg_.encoder_config(), rng);
    queries_ = QuerySet(cfg_.layout(), cfg_.d, rng, !cfg_.frozen_random_queries);
    if (!cfg_.disable_cf) {
      if (!cf_base) throw ContractError("SetRecModel: CF tokens enabled but no pretrained CF table given");
      cf_ = CfTokenizer::random(*cf_base, cfg_.d, rng);
    }
    if (!cfg_.disable_semantic) {
      if (cfg_.d_sem == 0) throw ConfigError("SetRecModel: d_sem must be set");
      ae_ = SemanticAE({cfg_.d_sem, cfg_.d, cfg_.n_sem, cfg_.ae_hidden}, rng);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  TokenLayout layout() const { return cfg_.layout(); }
  const Encoder& encoder() const { return *encoder_; }
  const QuerySet& queries() const { return queries_; }
  const CfTokenizer* cf() const { return cf_ ? &*cf_ : nullptr; }
  const SemanticAE* ae() const { return ae_ ? &*ae_ : nullptr; }

  ParameterList trainable_parameters() const {
    ParameterList out;
    for (auto& p : state())
      if (p.tensor.requires_grad()) out.push_back(p);
    return out;
  }

  /// Every persisted tensor, including frozen ones.
  ParameterList state() const {
    ParameterList out;
    append_prefixed(out, "encoder.", encoder_->parameters());
    out.push_back({"queries", queries_.vectors()});
    if (cf_) {
      append_prefixed(out, "cf.", cf_->parameters());
      out.push_back({"cf.base", cf_->frozen_base()});
    }
    if (ae_) append_prefixed(out, "ae.", ae_->parameters());
    return out;
  }

  TokenCorpus build_corpus(std::span<const std::string> items, const SemanticVectors& semantic) const {
    return build_token_corpus(items, semantic, layout(), cf(), ae());
  }

  GeneratedSet generate(std::span<const SetIdentifier> history, EncodeTrace trace = {}) const {
    return generate_set(history, queries_, *encoder_, cfg_.mask_kind(), trace);
  }

  /// Grounded scores for the next item after history (ids resolved in corpus).
  std::vector<ItemScore> score(std::span<const std::string> history, const TokenCorpus& corpus, double beta,
                               const std::vector<std::string>* candidates = nullptr) const {
    NoGradGuard no_grad;
    std::vector<SetIdentifier> ids;
    ids.reserve(history.size());
    for (const auto& h : history) ids.push_back(corpus.identifier(h));
    return ground_scores(generate(ids), corpus, beta, candidates, {cfg_.sim, cfg_.average_semantic});
  }

 private:
  TrainConfig cfg_;
  std::shared_ptr<Encoder> encoder_;
  QuerySet queries_;
  std::optional<CfTokenizer> cf_;
  std::optional<SemanticAE> ae_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainingInstance {
  std::vector<std::string> history;
  std::string target;
};

/// Each training position t ≥ 2 of every user predicts item t from the
/// preceding items, keeping the most recent max_history.
inline std::vector<TrainingInstance> training_instances(std::span<const UserSequence> users, std::size_t max_history) {
  std::vector<TrainingInstance> out;
  for (const auto& u : users) {
    const auto train = u.train();
    for (std::size_t t = 1; t < train.size(); ++t) {
      TrainingInstance inst;
      const std::size_t from = t > max_history ? t - max_history : 0;
      for (std::size_t j = from; j < t; ++j) inst.history.push_back(train[j].item_id);
      inst.target = train[t].item_id;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double total = 0.0;
  double gen = 0.0;
  double ae = 0.0;
};

struct TrainResult {
  SetRecModel model;
  std::vector<EpochStats> trace;
};

/// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochStats&, const SetRecModel&)>;

/// Live token tables of the warm items, recomputed from the tokenizers each step.
struct TokenTables {
  std::vector<Tensor> tables;                  // per dimension
  std::vector<std::vector<std::size_t>> rows;  // per warm item, per dimension
  Tensor reconstruction_loss;                  // undefined without semantic tokens
};

inline TokenTables live_token_tables(const SetRecModel& model, std::span<const std::string> warm,
                                     const Tensor& warm_semantic) {
  TokenTables t;
  const auto layout = model.layout();
  t.rows.assign(warm.size(), {});
  if (layout.cf) {
    t.tables.push_back(model.cf()->project_all());
    for (std::size_t i = 0; i < warm.size(); ++i) t.rows[i].push_back(model.cf()->row_of(warm[i]));
  }
  if (layout.n_sem > 0) {
    const auto& ae = *model.ae();
    const Tensor z = ae.encode(warm_semantic);
    const std::size_t d = ae.config().d;
    for (std::size_t n = 0; n < layout.n_sem; ++n) t.tables.push_back(slice_cols(z, n * d, d));
    for (std::size_t i = 0; i < warm.size(); ++i)
      for (std::size_t n = 0; n < layout.n_sem; ++n) t.rows[i].push_back(i);
    t.reconstruction_loss = ae_loss_rows(warm_semantic, ae.decode(z));
  }
  return t;
}

/// One objective evaluation over a batch of instances (indices into warm).
struct BatchLoss {
  Tensor total;
  Tensor gen;
  Tensor ae;
};

struct IndexedInstance {
  std::vector<std::size_t> history;  // warm indices
  std::size_t target = 0;
};

inline BatchLoss batch_loss(const SetRecModel& model, std::span<const std::string> warm, const Tensor& warm_semantic,
                            std::span<const IndexedInstance> batch, std::mt19937_64* rng = nullptr) {
  const auto& cfg = model.config();
  const TokenTables tt = live_token_tables(model, warm, warm_semantic);
  const std::size_t m = model.layout().size();

  // Offsets of each dimension's rows inside the stacked table.
  std::vector<Tensor> parts = tt.tables;
  std::vector<std::size_t> offset(m);
  std::size_t off = 0;
  for (std::size_t k = 0; k < m; ++k) {
    offset[k] = off;
    off += tt.tables[k].rows();
  }
  parts.push_back(model.queries().vectors());
  const Tensor stacked = concat_rows(parts);

  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const auto& inst : batch) {
    std::vector<std::vector<std::size_t>> rows;
    rows.reserve(inst.history.size());
    for (std::size_t h : inst.history) {
      std::vector<std::size_t> r(m);
      for (std::size_t k = 0; k < m; ++k) r[k] = offset[k] + tt.rows[h][k];
      rows.push_back(std::move(r));
    }
    const FlatSequence flat = flatten_from_table(stacked, rows, off, m, cfg.mask_kind());
    const Tensor hidden = model.encoder().encode(flat.embeddings, flat.positions, flat.mask);
    const GeneratedSet gen = read_query_slots(hidden, flat.layout, model.layout());
    losses.push_back(gen_loss_tables(gen.tokens, tt.tables, tt.rows[inst.target], cfg.sim, cfg.sampled_negatives, rng));
  }
  BatchLoss out;
  out.gen = scale(add_scalars(losses), 1.0 / static_cast<double>(batch.size()));
  out.ae = tt.reconstruction_loss;
  out.total = total_loss(out.gen, out.ae, cfg.alpha);
  return out;
}

/// Adaptive-moment descent on l_gen + α·l_ae over shuffled mini-batches.
inline TrainResult train(const Dataset& ds, TrainConfig cfg, const CfTable* cf_base, const EpochCallback& on_epoch = {}) {
  if (!cfg.disable_semantic && cfg.d_sem == 0) cfg.d_sem = ds.semantic.dim;
  cfg.validate();
  const auto instances = training_instances(ds.users, cfg.max_history);
  if (instances.empty()) throw DataError("train: empty training split (no user has two training items)");

  const std::vector<std::string>& warm = ds.items.warm;
  auto warm_index = [&](const std::string& item) {
    const auto it = std::lower_bound(warm.begin(), warm.end(), item);
    if (it == warm.end() || *it != item) throw DataError("train: training item '" + item + "' is not warm");
    return static_cast<std::size_t>(it - warm.begin());
  };
  std::vector<IndexedInstance> indexed;
  indexed.reserve(instances.size());
  for (const auto& inst : instances) {
    IndexedInstance x;
    for (const auto& h : inst.history) x.history.push_back(warm_index(h));
    x.target = warm_index(inst.target);
    indexed.push_back(std::move(x));
  }
  if (!cfg.disable_cf) {
    if (!cf_base) throw ContractError("train: CF pretraining has not been run");
    for (const auto& w : warm)
      if (!cf_base->find(w)) throw DataError("train: warm item '" + w + "' missing from the CF table");
  }
  const Tensor warm_semantic = cfg.disable_semantic ? Tensor() : semantic_matrix(ds.semantic, warm);

  TrainResult result{SetRecModel(cfg, cf_base), {}};
  const SetRecModel& model = result.model;
  Adam opt(model.trainable_parameters(), {cfg.lr});
  std::mt19937_64 rng(cfg.seed ^ 0x5eedull);
  std::vector<std::size_t> order(indexed.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats{epoch, 0.0, 0.0, 0.0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<IndexedInstance> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(indexed[order[i]]);
      opt.zero_grad();
      const BatchLoss loss = batch_loss(model, warm, warm_semantic, batch, &rng);
      if (!std::isfinite(loss.total.item()))
        throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch));
      stats.total += loss.total.item();
      stats.gen += loss.gen.item();
      stats.ae += loss.ae.defined() ? loss.ae.item() : 0.0;
      ++batches;
      backward(loss.total);
      if (cfg.grad_clip > 0.0) clip_grad_norm(opt.parameters(), cfg.grad_clip);
      opt.step();
    }
    stats.total /= static_cast<double>(batches);
    stats.gen /= static_cast<double>(batches);
    stats.ae /= static_cast<double>(batches);
    result.trace.push_back(stats);
    if (on_epoch && !on_epoch(stats, model)) break;
  }
  return result;
}

inline void write_loss_trace(std::ostream& out, std::span<const EpochStats> trace) {
  out << "epoch,total,gen,ae\n";
  for (const auto& s : trace)
    out << s.epoch << ',' << format_double(s.total) << ',' << format_double(s.gen) << ',' << format_double(s.ae) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

constexpr std::uint32_t kCheckpointVersion = 1;

/// STCKPT1 layout: magic, u32 version, config text (u32 length + bytes),
/// u32 tensor count, then per tensor {name string, u32 rank, u32 dims..., f64 data}.
inline void write_tensors(std::ostream& out, const std::string& config_text, const ParameterList& tensors) {
  out.write("STCKPT1", 7);
  io::put_u32(out, kCheckpointVersion);
  io::put_string(out, config_text);
  io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& p : tensors) {
    io::put_string(out, p.name);
    io::put_u32(out, 2);
    io::put_u32(out, static_cast<std::uint32_t>(p.tensor.rows()));
    io::put_u32(out, static_cast<std::uint32_t>(p.tensor.cols()));
    for (double v : p.tensor.data()) io::put_f64(out, v);
  }
}

struct TensorFile {
  std::string config_text;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
};

inline TensorFile read_tensors(std::istream& in) {
  io::expect_magic(in, "STCKPT1");
  const std::uint32_t version = io::get_u32(in);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  TensorFile f;
  f.config_text = io::get_string(in);
  const std::uint32_t count = io::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::get_string(in);
    const std::uint32_t rank = io::get_u32(in);
    if (rank == 0 || rank > 2) throw FormatError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    std::size_t rows = io::get_u32(in), cols = 1;
    if (rank == 2) cols = io::get_u32(in);
    std::vector<double> data(rows * cols);
    for (auto& v : data) v = io::get_f64(in);
    f.tensors.emplace(std::move(name), Tensor::from(rows, cols, std::move(data)));
  }
  return f;
}

inline void save_checkpoint(const SetRecModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  write_tensors(out, model.config().to_text(), model.state());
}

inline TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return read_tensors(in);
}

/// Rebuilds a model; cf_items names the rows of the stored CF table (the sorted warm items).
inline SetRecModel load_checkpoint(const std::string& path, const std::vector<std::string>& cf_items) {
  const TensorFile f = load_tensor_file(path);
  const TrainConfig cfg = TrainConfig::from_text(f.config_text);
  std::optional<CfTable> base;
  if (!cfg.disable_cf) {
    const Tensor& t = f.at("cf.base");
    if (t.rows() != cf_items.size())
      throw FormatError("checkpoint: CF table has " + std::to_string(t.rows()) + " rows for " +
                        std::to_string(cf_items.size()) + " warm items");
    base = CfTable{cf_items, t.cols(), std::vector<double>(t.data().begin(), t.data().end())};
  }
  SetRecModel model(cfg, base ? &*base : nullptr);
  for (const auto& p : model.state()) {
    const Tensor& src = f.at(p.name);
    if (src.shape() != p.tensor.shape())
      throw FormatError("checkpoint: tensor '" + p.name + "' has shape " + src.shape().str() + ", expected " +
                        p.tensor.shape().str());
    auto dst = p.tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  return model;
}

}  // namespace setident
