#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "setident/data.hpp"
#include "setident/error.hpp"
#include "setident/nn.hpp"
#include "setident/tensor.hpp"

namespace setident {

// ---------------------------------------------------------------------------
// Token layout: which information dimensions an identifier carries.

struct TokenLayout {
  bool cf = true;
  std::size_t n_sem = 2;

  std::size_t size() const { return (cf ? 1 : 0) + n_sem; }

  /// Canonical order: CF first, then S1..SN.
  std::vector<std::string> tags() const {
    std::vector<std::string> out;
    if (cf) out.emplace_back("CF");
    for (std::size_t n = 1; n <= n_sem; ++n) out.push_back("S" + std::to_string(n));
    return out;
  }

  bool operator==(const TokenLayout&) const = default;
};

/// One item's order-agnostic token set. z_cf is undefined when the layout has no CF dimension.
struct SetIdentifier {
  std::string item_id;
  Tensor z_cf;
  std::vector<Tensor> z_sem;

  /// Tokens in canonical [CF, S1..SN] order.
  std::vector<Tensor> tokens() const {
    std::vector<Tensor> out;
    if (z_cf.defined()) out.push_back(z_cf);
    out.insert(out.end(), z_sem.begin(), z_sem.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Collaborative-filtering pretraining (pairwise implicit feedback)

/// Frozen item embeddings from the pretrained CF model, rows in sorted item order.
struct CfTable {
  std::vector<std::string> items;
  std::size_t dim = 0;
  std::vector<double> values;  // items.size() × dim

  std::optional<std::size_t> find(const std::string& item) const {
    const auto it = std::lower_bound(items.begin(), items.end(), item);
    if (it == items.end() || *it != item) return std::nullopt;
    return static_cast<std::size_t>(it - items.begin());
  }

  std::span<const double> row(const std::string& item) const {
    const auto r = find(item);
    if (!r) throw DataError("unknown item '" + item + "' (not in CF training data)");
    return std::span(values).subspan(*r * dim, dim);
  }

  Tensor tensor() const { return Tensor::from(items.size(), dim, values); }
};

struct BprOptions {
  std::size_t dim = 32;
  std::size_t epochs = 100;
  double lr = 0.05;
  double reg = 1e-4;
  std::uint64_t seed = 1;
};

struct BprModel {
  CfTable items;
  std::map<std::string, std::vector<double>> users;

  double score(const std::string& user, const std::string& item) const {
    const auto u = users.find(user);
    if (u == users.end()) throw DataError("unknown user '" + user + "'");
    const auto q = items.row(item);
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += u->second[j] * q[j];
    return s;
  }
};

/// Matrix factorization trained so each observed (user, item) outscores a
/// sampled unobserved item; uses the training segments only.
inline BprModel pretrain_cf(std::span<const UserSequence> users, const BprOptions& opt = {}) {
  std::set<std::string> item_set;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& u : users)
    for (const auto& e : u.train()) item_set.insert(e.item_id);
  if (item_set.empty()) throw DataError("pretrain_cf: empty training split");
  if (item_set.size() < 2) throw DataError("pretrain_cf: need at least two training items");

  BprModel model;
  model.items.items.assign(item_set.begin(), item_set.end());
  model.items.dim = opt.dim;
  const std::size_t n_items = item_set.size();
  std::vector<std::set<std::size_t>> positives(users.size());
  for (std::size_t u = 0; u < users.size(); ++u)
    for (const auto& e : users[u].train()) {
      const std::size_t i = *model.items.find(e.item_id);
      positives[u].insert(i);
      pairs.emplace_back(u, i);
    }

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> init(0.0, 0.1);
  std::vector<double> p(users.size() * opt.dim), q(n_items * opt.dim);
  for (auto& x : p) x = init(rng);
  for (auto& x : q) x = init(rng);

  std::uniform_int_distribution<std::size_t> pick_item(0, n_items - 1);
  const std::size_t d = opt.dim;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (const auto& [u, i] : pairs) {
      if (positives[u].size() == n_items) continue;
      std::size_t j = pick_item(rng);
      while (positives[u].count(j)) j = pick_item(rng);
      double* pu = &p[u * d];
      double* qi = &q[i * d];
      double* qj = &q[j * d];
      double x = 0.0;
      for (std::size_t f = 0; f < d; ++f) x += pu[f] * (qi[f] - qj[f]);
      const double g = 1.0 / (1.0 + std::exp(x));  // σ(-x)
      for (std::size_t f = 0; f < d; ++f) {
        const double pf = pu[f];
        pu[f] += opt.lr * (g * (qi[f] - qj[f]) - opt.reg * pf);
        qi[f] += opt.lr * (g * pf - opt.reg * qi[f]);
        qj[f] += opt.lr * (-g * pf - opt.reg * qj[f]);
      }
    }
  }
  model.items.values = std::move(q);
  for (std::size_t u = 0; u < users.size(); ++u)
    model.users[users[u].user_id] = std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(u * d),
                                                        p.begin() + static_cast<std::ptrdiff_t>((u + 1) * d));
  return model;
}

// ---------------------------------------------------------------------------
// CF tokenizer

/// Frozen CF table followed by a trainable linear projection to the model
/// width. Items outside the table share one trainable default base row.
class CfTokenizer {
 public:
  CfTokenizer() = default;

  template <class Rng>
  static CfTokenizer random(CfTable base, std::size_t d, Rng& rng) {
    const std::size_t d_cf = base.dim;
    Tensor projection = Tensor::randn(d_cf, d, 1.0 / std::sqrt(static_cast<double>(d_cf)), rng, true);
    Tensor default_row = Tensor::randn(1, d_cf, 0.1, rng, true);
    return CfTokenizer(std::move(base), std::move(projection), Tensor::zeros(1, d, true), std::move(default_row));
  }

  CfTokenizer(CfTable base, Tensor projection, Tensor bias, Tensor default_row)
      : base_(std::move(base)),
        base_tensor_(base_.tensor()),
        projection_(std::move(projection)),
        bias_(std::move(bias)),
        default_row_(std::move(default_row)) {
    if (projection_.rows() != base_.dim || bias_.shape() != Shape{1, projection_.cols()} ||
        default_row_.shape() != Shape{1, base_.dim})
      throw DimensionError("CfTokenizer: projection/bias/default row shapes do not fit the CF table");
  }

  std::size_t dim() const { return projection_.cols(); }
  const CfTable& base() const { return base_; }
  std::size_t default_index() const { return base_.items.size(); }

  /// Row index into project_all(): the warm row or the shared default row.
  std::size_t row_of(const std::string& item) const { return base_.find(item).value_or(default_index()); }

  /// Projected tokens for all warm items followed by the projected default row.
  Tensor project_all() const {
    const std::vector<Tensor> parts{base_tensor_, default_row_};
    return add_row(matmul(concat_rows(parts), projection_), bias_);
  }

  Tensor tokenize(const std::string& item) const {
    const auto r = base_.find(item);
    const std::size_t idx[1] = {r.value_or(0)};
    const Tensor input = r ? gather_rows(base_tensor_, idx) : default_row_;
    return add_row(matmul(input, projection_), bias_);
  }

  ParameterList parameters() const {
    return {{"projection", projection_}, {"bias", bias_}, {"default_row", default_row_}};
  }
  const Tensor& frozen_base() const { return base_tensor_; }

 private:
  CfTable base_;
  Tensor base_tensor_;
  Tensor projection_;
  Tensor bias_;
  Tensor default_row_;
};

// ---------------------------------------------------------------------------
// Semantic tokenizer: one autoencoder producing all N tokens at once.

struct SemanticAEConfig {
  std::size_t d_sem = 768;
  std::size_t d = 64;
  std::size_t n_tokens = 2;
  std::vector<std::size_t> hidden{512, 256, 128};

  std::size_t latent() const { return n_tokens * d; }
};

class SemanticAE {
 public:
  SemanticAE() = default;

  template <class Rng>
  SemanticAE(const SemanticAEConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.d_sem == 0 || cfg.d == 0 || cfg.n_tokens == 0) throw ConfigError("SemanticAE: dimensions must be >= 1");
    std::vector<std::size_t> widths{cfg.d_sem};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(cfg.latent());
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) encoder_.emplace_back(widths[i], widths[i + 1], rng);
    for (std::size_t i = widths.size() - 1; i > 0; --i) decoder_.emplace_back(widths[i], widths[i - 1], rng);
  }

  const SemanticAEConfig& config() const { return cfg_; }

  /// [B×d_sem] → [B×N·d]
  Tensor encode(const Tensor& s) const {
    if (s.cols() != cfg_.d_sem)
      throw DimensionError("sem_encode: input width " + std::to_string(s.cols()) + " != d_sem=" +
                           std::to_string(cfg_.d_sem));
    return run(encoder_, s);
  }

  /// [B×N·d] → [B×d_sem]
  Tensor decode(const Tensor& z) const {
    if (z.cols() != cfg_.latent())
      throw DimensionError("sem_decode: input width " + std::to_string(z.cols()) + " != N*d=" +
                           std::to_string(cfg_.latent()));
    return run(decoder_, z);
  }

  /// Splits the encoding of one vector into N tokens of width d.
  std::vector<Tensor> sem_encode(std::span<const double> s) const {
    const Tensor z = encode(Tensor::row(s));
    std::vector<Tensor> out;
    for (std::size_t n = 0; n < cfg_.n_tokens; ++n) out.push_back(slice_cols(z, n * cfg_.d, cfg_.d));
    return out;
  }

  Tensor sem_decode(std::span<const double> z) const { return decode(Tensor::row(z)); }

  ParameterList parameters() const {
    ParameterList out;
    for (std::size_t i = 0; i < encoder_.size(); ++i)
      append_prefixed(out, "enc" + std::to_string(i) + ".", encoder_[i].parameters());
    for (std::size_t i = 0; i < decoder_.size(); ++i)
      append_prefixed(out, "dec" + std::to_string(i) + ".", decoder_[i].parameters());
    return out;
  }

  std::size_t parameter_count() const { return count_elements(parameters()); }

  /// Parameter count of N separate autoencoders, each emitting one d-wide token.
  static std::size_t independent_parameter_count(const SemanticAEConfig& cfg) {
    std::vector<std::size_t> widths{cfg.d_sem};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(cfg.d);
    std::size_t one = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) one += 2 * (widths[i] * widths[i + 1]) + widths[i] + widths[i + 1];
    return cfg.n_tokens * one;
  }

 private:
  static Tensor run(const std::vector<Linear>& layers, Tensor x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  SemanticAEConfig cfg_;
  std::vector<Linear> encoder_;
  std::vector<Linear> decoder_;
};

/// Squared L2 reconstruction error ‖s − ŝ‖².
inline Tensor ae_loss(const Tensor& s, const Tensor& s_hat) {
  if (s.shape() != s_hat.shape())
    throw DimensionError("ae_loss: shape mismatch " + s.shape().str() + " vs " + s_hat.shape().str());
  const Tensor diff = sub(s, s_hat);
  return dot(diff, diff);
}

/// Mean over rows of the per-row squared reconstruction error.
inline Tensor ae_loss_rows(const Tensor& s, const Tensor& s_hat) {
  return scale(ae_loss(s, s_hat), 1.0 / static_cast<double>(s.rows()));
}

inline Tensor semantic_matrix(const SemanticVectors& sv, std::span<const std::string> items) {
  std::vector<double> values;
  values.reserve(items.size() * sv.dim);
  for (const auto& item : items) {
    const auto& v = sv.at(item);
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor::from(items.size(), sv.dim, std::move(values));
}

// ---------------------------------------------------------------------------
// Token corpus

struct CorpusDimension {
  std::string tag;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return std::span(values).subspan(r * dim, dim); }
  Tensor tensor() const { return Tensor::from(rows, dim, values); }
};

/// Per-dimension token matrices. Semantic matrices hold one row per item;
/// the CF matrix holds warm rows plus a trailing default row shared by cold items.
class TokenCorpus {
 public:
  TokenCorpus() = default;
  TokenCorpus(TokenLayout layout, std::vector<std::string> items, std::vector<CorpusDimension> dims,
              std::vector<std::uint32_t> cf_rows)
      : layout_(layout), items_(std::move(items)), dims_(std::move(dims)), cf_rows_(std::move(cf_rows)) {
    if (dims_.size() != layout_.size()) throw DimensionError("TokenCorpus: dimension count does not match layout");
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (!index_.emplace(items_[i], i).second) throw DataError("TokenCorpus: duplicate item '" + items_[i] + "'");
    if (layout_.cf && cf_rows_.size() != items_.size()) throw DimensionError("TokenCorpus: CF row map size mismatch");
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      const bool is_cf = layout_.cf && k == 0;
      if (!is_cf && dims_[k].rows != items_.size())
        throw DimensionError("TokenCorpus: dimension " + dims_[k].tag + " has " + std::to_string(dims_[k].rows) +
                             " rows for " + std::to_string(items_.size()) + " items");
    }
  }

  const TokenLayout& layout() const { return layout_; }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<CorpusDimension>& dimensions() const { return dims_; }
  const CorpusDimension& dimension(std::size_t k) const { return dims_.at(k); }
  std::size_t dim() const { return dims_.empty() ? 0 : dims_[0].dim; }
  const std::vector<std::uint32_t>& cf_rows() const { return cf_rows_; }

  std::optional<std::size_t> find(const std::string& item) const {
    const auto it = index_.find(item);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& item) const {
    const auto i = find(item);
    if (!i) throw DataError("item '" + item + "' is not in the token corpus");
    return *i;
  }

  /// Row of item index i inside dimension k.
  std::size_t row_in(std::size_t k, std::size_t item) const {
    return (layout_.cf && k == 0) ? cf_rows_[item] : item;
  }

  std::span<const double> token(std::size_t k, std::size_t item) const { return dims_[k].row(row_in(k, item)); }

  SetIdentifier identifier(const std::string& item) const {
    const std::size_t i = index_of(item);
    SetIdentifier id{item, {}, {}};
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      Tensor t = Tensor::row(token(k, i));
      if (layout_.cf && k == 0)
        id.z_cf = std::move(t);
      else
        id.z_sem.push_back(std::move(t));
    }
    return id;
  }

  /// Appends a new item without touching existing rows. CF-bearing corpora map it to the default row.
  void append_item(const std::string& item, std::span<const std::vector<double>> semantic_tokens) {
    if (index_.count(item)) throw DataError("TokenCorpus: item '" + item + "' already present");
    if (semantic_tokens.size() != layout_.n_sem)
      throw DimensionError("TokenCorpus: expected " + std::to_string(layout_.n_sem) + " semantic tokens");
    const std::size_t first_sem = layout_.cf ? 1 : 0;
    for (std::size_t n = 0; n < layout_.n_sem; ++n) {
      auto& dimension = dims_[first_sem + n];
      if (semantic_tokens[n].size() != dimension.dim) throw DimensionError("TokenCorpus: token width mismatch");
      dimension.values.insert(dimension.values.end(), semantic_tokens[n].begin(), semantic_tokens[n].end());
      ++dimension.rows;
    }
    if (layout_.cf) cf_rows_.push_back(static_cast<std::uint32_t>(dims_[0].rows - 1));
    index_.emplace(item, items_.size());
    items_.push_back(item);
  }

 private:
  TokenLayout layout_;
  std::vector<std::string> items_;
  std::vector<CorpusDimension> dims_;
  std::vector<std::uint32_t> cf_rows_;
  std::map<std::string, std::size_t> index_;
};

inline CorpusDimension to_dimension(std::string tag, const Tensor& t) {
  return {std::move(tag), t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end())};
}

/// Tokenizes every item (sorted by id) into the per-dimension corpus.
inline TokenCorpus build_token_corpus(std::span<const std::string> items, const SemanticVectors& semantic,
                                      const TokenLayout& layout, const CfTokenizer* cf, const SemanticAE* ae) {
  NoGradGuard no_grad;
  std::vector<std::string> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end());
  const auto tags = layout.tags();
  std::vector<CorpusDimension> dims;
  std::vector<std::uint32_t> cf_rows;
  if (layout.cf) {
    if (!cf) throw ContractError("build_token_corpus: layout has CF but no CF tokenizer");
    dims.push_back(to_dimension("CF", cf->project_all()));
    for (const auto& item : sorted) cf_rows.push_back(static_cast<std::uint32_t>(cf->row_of(item)));
  }
  if (layout.n_sem > 0) {
    if (!ae) throw ContractError("build_token_corpus: layout has semantic tokens but no autoencoder");
    if (ae->config().n_tokens != layout.n_sem)
      throw DimensionError("build_token_corpus: autoencoder emits " + std::to_string(ae->config().n_tokens) +
                           " tokens, layout has N=" + std::to_string(layout.n_sem));
    for (const auto& item : sorted)
      if (!semantic.contains(item)) throw DataError("build_token_corpus: item '" + item + "' has no semantic vector");
    const Tensor z = ae->encode(semantic_matrix(semantic, sorted));
    const std::size_t d = ae->config().d;
    for (std::size_t n = 0; n < layout.n_sem; ++n)
      dims.push_back(to_dimension(tags[(layout.cf ? 1 : 0) + n], slice_cols(z, n * d, d)));
  }
  return TokenCorpus(layout, std::move(sorted), std::move(dims), std::move(cf_rows));
}

/// Adds a new item's semantic rows from the trained autoencoder; no retraining.
inline void extend_corpus(TokenCorpus& corpus, const std::string& item, std::span<const double> semantic,
                          const SemanticAE& ae) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> tokens;
  for (const auto& t : ae.sem_encode(semantic)) tokens.emplace_back(t.data().begin(), t.data().end());
  corpus.append_item(item, tokens);
}

// ---------------------------------------------------------------------------
// Binary I/O helpers (little-endian)

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("unexpected end of file");
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string get_string(std::istream& in, std::size_t limit = 1u << 20) {
  const std::uint32_t n = get_u32(in);
  if (n > limit) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (got != magic) throw FormatError("bad magic: expected " + std::string(magic));
}

}  // namespace io

// STCORP1 layout: magic, u32 dimension count, per dimension {tag string,
// u32 rows, u32 dim, rows·dim f64}, u32 item count, item ids, and for CF
// corpora one u32 CF row per item. Strings are u32 length + UTF-8 bytes.
inline void write_corpus(std::ostream& out, const TokenCorpus& corpus) {
  out.write("STCORP1", 7);
  io::put_u32(out, static_cast<std::uint32_t>(corpus.dimensions().size()));
  for (const auto& d : corpus.dimensions()) {
    io::put_string(out, d.tag);
    io::put_u32(out, static_cast<std::uint32_t>(d.rows));
    io::put_u32(out, static_cast<std::uint32_t>(d.dim));
    for (double v : d.values) io::put_f64(out, v);
  }
  io::put_u32(out, static_cast<std::uint32_t>(corpus.items().size()));
  for (const auto& item : corpus.items()) io::put_string(out, item);
  if (corpus.layout().cf)
    for (auto r : corpus.cf_rows()) io::put_u32(out, r);
}

inline TokenCorpus read_corpus(std::istream& in) {
  io::expect_magic(in, "STCORP1");
  const std::uint32_t ndims = io::get_u32(in);
  std::vector<CorpusDimension> dims(ndims);
  TokenLayout layout{false, 0};
  for (auto& d : dims) {
    d.tag = io::get_string(in);
    d.rows = io::get_u32(in);
    d.dim = io::get_u32(in);
    d.values.resize(d.rows * d.dim);
    for (auto& v : d.values) v = io::get_f64(in);
    if (d.tag == "CF") {
      if (&d != &dims.front()) throw FormatError("corpus: CF dimension must come first");
      layout.cf = true;
    } else {
      ++layout.n_sem;
    }
  }
  const std::uint32_t n = io::get_u32(in);
  std::vector<std::string> items(n);
  for (auto& item : items) item = io::get_string(in);
  std::vector<std::uint32_t> cf_rows;
  if (layout.cf) {
    cf_rows.resize(n);
    for (auto& r : cf_rows) {
      r = io::get_u32(in);
      if (r >= dims[0].rows) throw FormatError("corpus: CF row index out of range");
    }
  }
  return TokenCorpus(layout, std::move(items), std::move(dims), std::move(cf_rows));
}

inline void save_corpus(const TokenCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus: " + path);
  write_corpus(out, corpus);
}

inline TokenCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus: " + path);
  return read_corpus(in);
}

}  // namespace setident
