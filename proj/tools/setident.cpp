// setident command-line driver.
//
// Artifacts live in one working directory (--out, default "run"):
//   prepare      snapshot.txt, snapshot.hash
//   pretrain-cf  cf.txt
//   train        model[-TAG].ckpt, loss_trace[-TAG].csv
//   eval         report[-TAG]-<setting>.csv, report[-TAG].txt
//   bench        bench.csv
//   demo-beam    beam_demo.csv
//   sweep        sweep[-TAG]/<point>.csv, sweep[-TAG]/summary.csv
// manifest.txt records the hash and seed of every artifact written.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "setident/setident.hpp"

namespace fs = std::filesystem;
using namespace setident;

namespace {

// ---------------------------------------------------------------------------
// logging

enum class Level { quiet = 0, error, warn, info, debug };

Level g_level = Level::info;

Level level_from_env() {
  const char* v = std::getenv("SETIDENT_LOG");
  if (!v) return Level::info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return Level::quiet;
  if (s == "error" || s == "1") return Level::error;
  if (s == "warn" || s == "2") return Level::warn;
  if (s == "debug" || s == "4") return Level::debug;
  return Level::info;
}

void log(Level l, const std::string& msg) {
  static const char* names[] = {"", "error", "warn", "info", "debug"};
  if (l <= g_level) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

/// Bad invocation or missing prerequisite; exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// settings: config file, then command-line overrides

class Settings {
 public:
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string s = trim(line.substr(0, line.find('#')));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw UsageError(path + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(s.substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(s.substr(0, eq));
      set(section.empty() ? key : section + "." + key, trim(s.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback = "") const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::size_t size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    std::int64_t v;
    if (!detail::parse_int64(str(key), v) || v < 0) throw UsageError(key + ": expected a nonnegative integer");
    return static_cast<std::size_t>(v);
  }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_number(key, str(key));
  }

  /// Keys under "section.", without the prefix.
  std::map<std::string, std::string> section(const std::string& name) const {
    std::map<std::string, std::string> out;
    const std::string prefix = name + ".";
    for (const auto& [k, v] : kv_)
      if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
    return out;
  }

  static double parse_number(const std::string& what, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(what + ": expected a number, got '" + s + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  std::map<std::string, std::string> kv_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<std::size_t> size_list(const std::string& what, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& p : split_list(s)) {
    std::int64_t v;
    if (!detail::parse_int64(p, v) || v <= 0) throw UsageError(what + ": expected positive integers, got '" + p + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

/// "lo:hi:step" or a comma list.
std::vector<double> grid(const std::string& what, const std::string& s) {
  std::vector<double> out;
  if (s.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream in(s);
    for (std::string p; std::getline(in, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw UsageError(what + ": range must be lo:hi:step");
    const double lo = Settings::parse_number(what, parts[0]);
    const double hi = Settings::parse_number(what, parts[1]);
    const double step = Settings::parse_number(what, parts[2]);
    if (step <= 0.0 || hi < lo) throw UsageError(what + ": need lo <= hi and step > 0");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
  } else {
    for (const auto& p : split_list(s)) out.push_back(Settings::parse_number(what, p));
  }
  if (out.empty()) throw UsageError(what + ": empty grid");
  return out;
}

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// artifacts

struct Paths {
  fs::path out;
  std::string tag;

  fs::path snapshot() const { return out / "snapshot.txt"; }
  fs::path cf() const { return out / "cf.txt"; }
  fs::path tagged(const std::string& stem, const std::string& ext) const {
    return out / (stem + (tag.empty() ? "" : "-" + tag) + ext);
  }
  fs::path checkpoint() const { return tagged("model", ".ckpt"); }
};

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw UsageError("missing prerequisite " + p.string() + " (run `setident " + producer + "` first)");
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content_hash(bytes);
}

/// manifest.txt: one "file<TAB>hash<TAB>seed" line per artifact, sorted by file.
void record(const Paths& paths, const fs::path& artifact, std::uint64_t seed) {
  const fs::path manifest = paths.out / "manifest.txt";
  std::map<std::string, std::string> rows;
  if (std::ifstream in(manifest); in) {
    std::string line;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab != std::string::npos) rows[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }
  const std::string name = fs::relative(artifact, paths.out).generic_string();
  rows[name] = file_hash(artifact) + "\t" + std::to_string(seed);
  std::ofstream out(manifest);
  for (const auto& [k, v] : rows) out << k << '\t' << v << '\n';
  log(Level::debug, "wrote " + artifact.string());
}

std::ofstream open_output(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

void write_cf(const CfTable& table, const fs::path& path) {
  SemanticVectors sv;
  sv.dim = table.dim;
  for (const auto& item : table.items) {
    const auto row = table.row(item);
    sv.vectors[item] = std::vector<double>(row.begin(), row.end());
  }
  auto out = open_output(path);
  write_semantic_vectors(out, sv);
}

CfTable read_cf(const fs::path& path) {
  const SemanticVectors sv = load_semantic_vectors(path.string());
  CfTable t;
  t.dim = sv.dim;
  for (const auto& [item, v] : sv.vectors) {
    t.items.push_back(item);
    t.values.insert(t.values.end(), v.begin(), v.end());
  }
  return t;
}

// ---------------------------------------------------------------------------
// commands

struct Context {
  Settings settings;
  Paths paths;
  std::uint64_t seed = 42;
  std::size_t workers = 1;
};

TrainConfig train_config(const Context& ctx) {
  TrainConfig cfg;
  cfg.seed = ctx.seed;
  for (const auto& [k, v] : ctx.settings.section("train")) cfg.set(k, v);
  if (cfg.disable_cf && cfg.disable_semantic)
    throw UsageError("--no-sem and --no-cf together leave no identifier dimension to generate");
  return cfg;
}

Dataset load_dataset(const Context& ctx) {
  require(ctx.paths.snapshot(), "prepare");
  return load_snapshot(ctx.paths.snapshot().string());
}

int cmd_prepare(const Context& ctx) {
  const Settings& s = ctx.settings;
  const std::string interactions = s.str("data.interactions");
  if (interactions.empty()) throw UsageError("prepare: --interactions is required");
  const bool have_vectors = s.has("data.semantic_vectors"), have_synth = s.has("data.synth_seed");
  if (have_vectors == have_synth) throw UsageError("prepare: give exactly one of --semantic and --synth-seed");

  const auto raw = load_interactions(interactions);
  std::map<std::string, ItemMeta> meta;
  if (s.has("data.metadata")) meta = load_item_metadata(s.str("data.metadata"));
  Dataset ds = build_dataset(raw, std::move(meta), s.size("data.groups", 4));
  if (have_vectors) {
    ds.semantic = load_semantic_vectors(s.str("data.semantic_vectors"));
  } else {
    ds.semantic = synth_semantic(ds.catalog, ds.metadata, s.size("data.synth_dim", 64), s.size("data.synth_seed", 0));
  }
  require_semantic_coverage(ds);

  fs::create_directories(ctx.paths.out);
  const std::string hash = save_snapshot(ds, ctx.paths.snapshot().string());
  {
    auto out = open_output(ctx.paths.out / "snapshot.hash");
    out << hash << '\n';
  }
  record(ctx.paths, ctx.paths.snapshot(), ctx.seed);
  if (ds.dropped_users) log(Level::warn, std::to_string(ds.dropped_users) + " users dropped (fewer than 5 interactions)");
  std::cout << "users " << ds.users.size() << '\n'
            << "items " << ds.catalog.size() << '\n'
            << "warm " << ds.items.warm.size() << '\n'
            << "cold " << ds.items.cold.size() << '\n'
            << "hash " << hash << '\n';
  return 0;
}

int cmd_pretrain_cf(const Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  const Settings& s = ctx.settings;
  BprOptions opt;
  opt.dim = s.size("cf.dim", opt.dim);
  opt.epochs = s.size("cf.epochs", opt.epochs);
  opt.lr = s.number("cf.lr", opt.lr);
  opt.reg = s.number("cf.reg", opt.reg);
  opt.seed = s.size("cf.seed", ctx.seed);
  if (opt.dim == 0) throw UsageError("pretrain-cf: --cf-dim must be >= 1");
  log(Level::info, "BPR: dim " + std::to_string(opt.dim) + ", " + std::to_string(opt.epochs) + " epochs");
  const BprModel bpr = pretrain_cf(ds.users, opt);
  write_cf(bpr.items, ctx.paths.cf());
  record(ctx.paths, ctx.paths.cf(), opt.seed);
  std::cout << "cf items " << bpr.items.items.size() << " dim " << opt.dim << " -> " << ctx.paths.cf().string() << '\n';
  return 0;
}

std::optional<CfTable> load_cf_if_needed(const Context& ctx, const TrainConfig& cfg) {
  if (cfg.disable_cf) return std::nullopt;
  require(ctx.paths.cf(), "pretrain-cf");
  return read_cf(ctx.paths.cf());
}

TrainResult run_training(const Dataset& ds, const TrainConfig& cfg, const CfTable* cf) {
  const auto start = std::chrono::steady_clock::now();
  auto res = train(ds, cfg, cf, [&](const EpochStats& e, const SetRecModel&) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu/%zu  loss %.5f  gen %.5f  ae %.5f", e.epoch, cfg.epochs, e.total, e.gen,
                  e.ae);
    log(Level::info, buf);
    return true;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log(Level::debug, "training took " + short_double(secs) + " s");
  return res;
}

int cmd_train(const Context& ctx) {
  const TrainConfig cfg = train_config(ctx);
  const Dataset ds = load_dataset(ctx);
  const auto cf = load_cf_if_needed(ctx, cfg);
  const auto res = run_training(ds, cfg, cf ? &*cf : nullptr);

  save_checkpoint(res.model, ctx.paths.checkpoint().string());
  record(ctx.paths, ctx.paths.checkpoint(), cfg.seed);
  const fs::path trace = ctx.paths.tagged("loss_trace", ".csv");
  {
    auto out = open_output(trace);
    write_loss_trace(out, res.trace);
  }
  record(ctx.paths, trace, cfg.seed);
  std::cout << "trained " << res.trace.size() << " epochs, final loss " << short_double(res.trace.back().total)
            << " -> " << ctx.paths.checkpoint().string() << '\n';
  return 0;
}

std::vector<Setting> settings_list(const Settings& s) {
  std::vector<Setting> out;
  for (const auto& name : split_list(s.str("eval.settings", "all,warm,cold"))) {
    try {
      out.push_back(parse_setting(name));
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("eval: empty settings list");
  return out;
}

EvalOptions eval_options(const Context& ctx) {
  EvalOptions opt;
  opt.ks = size_list("eval.ks", ctx.settings.str("eval.ks", "5,10"));
  opt.group_k = ctx.settings.size("eval.group_k", 10);
  opt.workers = ctx.workers;
  return opt;
}

std::vector<MetricsReport> evaluate_all(const SetRecModel& model, const TokenCorpus& corpus, const Dataset& ds,
                                        std::span<const Setting> settings, double beta, const EvalOptions& opt) {
  std::vector<MetricsReport> out;
  for (Setting st : settings) {
    out.push_back(evaluate(model, corpus, ds, st, beta, opt));
    if (out.back().instances == 0) log(Level::warn, "no test instances in setting " + to_string(st));
  }
  return out;
}

int cmd_eval(const Context& ctx) {
  const Dataset ds = load_dataset(ctx);
  require(ctx.paths.checkpoint(), "train");
  const SetRecModel model = load_checkpoint(ctx.paths.checkpoint().string(), ds.items.warm);
  const double beta = ctx.settings.number("eval.beta", model.config().beta);
  if (!(beta >= 0.0 && beta <= 1.0)) throw UsageError("eval: beta must lie in [0, 1]");
  const auto settings = settings_list(ctx.settings);
  const TokenCorpus corpus = model.build_corpus(ds.catalog, ds.semantic);
  const auto reports = evaluate_all(model, corpus, ds, settings, beta, eval_options(ctx));

  for (const auto& r : reports) {
    const fs::path p = ctx.paths.tagged("report", "-" + r.setting + ".csv");
    {
      auto out = open_output(p);
      write_report_csv(out, std::span(&r, 1));
    }
    record(ctx.paths, p, model.config().seed);
  }
  const fs::path summary = ctx.paths.tagged("report", ".txt");
  {
    auto out = open_output(summary);
    write_report_summary(out, reports);
  }
  record(ctx.paths, summary, model.config().seed);
  write_report_summary(std::cout, reports);
  return 0;
}

int cmd_bench(const Context& ctx) {
  const Settings& s = ctx.settings;
  const auto ls = size_list("bench.L", s.str("bench.L", "32"));
  const auto ms = size_list("bench.M", s.str("bench.M", "1,2,4,6"));
  const std::size_t d = s.size("bench.d", 64), heads = s.size("bench.heads", 4), layers = s.size("bench.layers", 1);
  if (d == 0 || heads == 0 || layers == 0 || d % heads) throw UsageError("bench: need d, heads, layers >= 1 and heads | d");

  std::vector<BenchResult> rows;
  for (std::size_t l : ls)
    for (std::size_t m : ms) {
      rows.push_back(bench_generation(l, m, d, heads, layers, ctx.seed));
      char buf[160];
      std::snprintf(buf, sizeof buf, "L=%-4zu M=%-2zu d=%-4zu flattened %12llu  per-token %12llu  ratio %.3f  calls %llu vs %llu",
                    l, m, d, static_cast<unsigned long long>(rows.back().flattened_macs),
                    static_cast<unsigned long long>(rows.back().original_macs), rows.back().ratio(),
                    static_cast<unsigned long long>(rows.back().flattened_calls),
                    static_cast<unsigned long long>(rows.back().original_calls));
      std::cout << buf << '\n';
    }
  fs::create_directories(ctx.paths.out);
  const fs::path p = ctx.paths.out / "bench.csv";
  {
    auto out = open_output(p);
    write_bench_csv(out, rows);
  }
  record(ctx.paths, p, ctx.seed);
  return 0;
}

int cmd_demo_beam(const Context& ctx) {
  const Settings& s = ctx.settings;
  const std::size_t decoders = s.size("demo.decoders", 100);
  const std::size_t vocab = s.size("demo.vocab", 8);
  const std::size_t length = s.size("demo.length", 3);
  const auto beams = size_list("demo.beams", s.str("demo.beams", "1,2,4"));
  if (decoders == 0 || vocab == 0 || length == 0) throw UsageError("demo-beam: decoders, vocab and length must be >= 1");
  if (std::pow(static_cast<double>(vocab), static_cast<double>(length)) > static_cast<double>(kMaxGlobalSearch))
    throw UsageError("demo-beam: vocab^length exceeds " + std::to_string(kMaxGlobalSearch));

  const auto rows = beam_vs_global(decoders, vocab, length, beams, ctx.seed);
  std::cout << decoders << " random decoders, |V|=" << vocab << ", T=" << length << "\n";
  std::cout << "   K   beam R@1   global R@1   misses\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%4zu   %8.3f   %10.3f   %6zu\n", r.beam, r.beam_recall, r.global_recall, r.misses);
    std::cout << buf;
  }
  fs::create_directories(ctx.paths.out);
  const fs::path p = ctx.paths.out / "beam_demo.csv";
  {
    auto out = open_output(p);
    out << "K,beam_recall,global_recall,misses\n";
    for (const auto& r : rows)
      out << r.beam << ',' << format_double(r.beam_recall) << ',' << format_double(r.global_recall) << ',' << r.misses
          << '\n';
  }
  record(ctx.paths, p, ctx.seed);
  return 0;
}

int cmd_sweep(const Context& ctx) {
  const Settings& s = ctx.settings;
  const TrainConfig base = train_config(ctx);
  const auto betas = grid("sweep.beta", s.str("sweep.beta", "0:1:0.1"));
  const auto alphas = grid("sweep.alpha", s.str("sweep.alpha", format_double(base.alpha)));
  const auto n_sems = size_list("sweep.n_sem", s.str("sweep.n_sem", std::to_string(base.n_sem)));
  for (double b : betas)
    if (!(b >= 0.0 && b <= 1.0)) throw UsageError("sweep: beta " + short_double(b) + " outside [0, 1]");
  for (double a : alphas)
    if (a < 0.0) throw UsageError("sweep: alpha must be >= 0");

  const Dataset ds = load_dataset(ctx);
  const auto cf = load_cf_if_needed(ctx, base);
  const auto settings = settings_list(s);
  const EvalOptions opt = eval_options(ctx);
  const fs::path dir = ctx.paths.tagged("sweep", "");
  fs::create_directories(dir);

  std::ostringstream summary;
  summary << "alpha,n_sem,beta,setting,k,group,recall,ndcg,count\n";
  std::size_t points = 0;
  for (double alpha : alphas)
    for (std::size_t n_sem : n_sems) {
      TrainConfig cfg = base;
      cfg.alpha = alpha;
      cfg.n_sem = n_sem;
      log(Level::info, "sweep: training alpha=" + short_double(alpha) + " n_sem=" + std::to_string(n_sem));
      const auto res = run_training(ds, cfg, cf ? &*cf : nullptr);
      const TokenCorpus corpus = res.model.build_corpus(ds.catalog, ds.semantic);
      for (double beta : betas) {
        const auto reports = evaluate_all(res.model, corpus, ds, settings, beta, opt);
        const fs::path p =
            dir / ("a" + short_double(alpha) + "_n" + std::to_string(n_sem) + "_b" + short_double(beta) + ".csv");
        std::ostringstream csv;
        write_report_csv(csv, reports);
        {
          auto out = open_output(p);
          out << csv.str();
        }
        record(ctx.paths, p, cfg.seed);
        std::istringstream rows(csv.str());
        std::string line;
        std::getline(rows, line);
        while (std::getline(rows, line))
          summary << format_double(alpha) << ',' << n_sem << ',' << line.substr(0, line.find(',')) << ','
                  << line.substr(line.find(',') + 1) << '\n';
        ++points;
        const auto& first = reports.front().at_k.begin()->second;
        char buf[160];
        std::snprintf(buf, sizeof buf, "alpha=%-6g n_sem=%-2zu beta=%-5g %s Recall@%zu %.4f  NDCG@%zu %.4f", alpha,
                      n_sem, beta, reports.front().setting.c_str(), reports.front().at_k.begin()->first, first.recall,
                      reports.front().at_k.begin()->first, first.ndcg);
        std::cout << buf << '\n';
      }
    }
  const fs::path sp = dir / "summary.csv";
  {
    auto out = open_output(sp);
    out << summary.str();
  }
  record(ctx.paths, sp, base.seed);
  std::cout << points << " reports written to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  g_level = level_from_env();

  CLI::App app{"Set-identifier generative recommendation: data preparation, training, evaluation and benchmarks"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "run", tag;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::vector<std::string> overrides;  // "section.key=value", in command-line order

  app.add_option("--config", config_path, "key=value config file with [section] headers");
  app.add_option("--out", out_dir, "working directory for artifacts")->capture_default_str();
  app.add_option("--tag", tag, "suffix for model, report and sweep artifacts");
  app.add_option("--seed", seed, "top-level seed (default 42)");
  app.add_option("--workers", workers, "evaluation threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "override any config key: section.key=value");

  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&overrides, key](const std::string& v) { overrides.push_back(key + "=" + v); },
                                          help);
  };
  auto bind_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_flag_callback(flag, [&overrides, key] { overrides.push_back(key + "=1"); }, help);
  };
  auto train_flags = [&](CLI::App* sub) {
    bind(sub, "--epochs", "train.epochs", "training epochs");
    bind(sub, "--d", "train.d", "token width d");
    bind(sub, "--n-sem", "train.n_sem", "semantic tokens per item (N)");
    bind(sub, "--alpha", "train.alpha", "weight of the reconstruction loss");
    bind(sub, "--beta", "train.beta", "grounding weight of semantic scores");
    bind(sub, "--lr", "train.lr", "learning rate");
    bind(sub, "--batch-size", "train.batch_size", "mini-batch size");
    bind(sub, "--layers", "train.layers", "encoder layers");
    bind(sub, "--heads", "train.heads", "attention heads");
    bind(sub, "--max-history", "train.max_history", "history items per instance");
    bind_flag(sub, "--no-sem", "train.disable_semantic", "drop semantic tokens (CF only)");
    bind_flag(sub, "--no-cf", "train.disable_cf", "drop the CF token (semantic only)");
    bind_flag(sub, "--frozen-queries", "train.frozen_random_queries", "keep query vectors at their random init");
    bind_flag(sub, "--full-mask", "train.full_attention_mask", "plain causal mask instead of the sparse set mask");
  };
  auto eval_flags = [&](CLI::App* sub) {
    bind(sub, "--settings", "eval.settings", "comma list of all, warm, cold");
    bind(sub, "--ks", "eval.ks", "comma list of cutoffs K");
    bind(sub, "--group-k", "eval.group_k", "cutoff for popularity-group metrics");
  };

  auto* prepare = app.add_subcommand("prepare", "split interactions and write the dataset snapshot");
  bind(prepare, "--interactions", "data.interactions", "user<TAB>item<TAB>timestamp file");
  bind(prepare, "--metadata", "data.metadata", "item<TAB>category<TAB>title file");
  bind(prepare, "--semantic", "data.semantic_vectors", "SEMTXT1 semantic vector file");
  bind(prepare, "--synth-seed", "data.synth_seed", "generate semantic vectors from categories with this seed");
  bind(prepare, "--synth-dim", "data.synth_dim", "width of generated semantic vectors (default 64)");
  bind(prepare, "--groups", "data.groups", "popularity groups (default 4)");

  auto* pretrain = app.add_subcommand("pretrain-cf", "train the BPR model that supplies CF tokens");
  bind(pretrain, "--cf-dim", "cf.dim", "embedding width (default 32)");
  bind(pretrain, "--cf-epochs", "cf.epochs", "epochs (default 100)");
  bind(pretrain, "--cf-lr", "cf.lr", "learning rate");
  bind(pretrain, "--cf-reg", "cf.reg", "L2 regularization");

  auto* train_cmd = app.add_subcommand("train", "train the set-identifier generator");
  train_flags(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_flags(eval_cmd);
  bind(eval_cmd, "--beta", "eval.beta", "grounding weight (default: the checkpoint's)");

  auto* bench = app.add_subcommand("bench", "MAC counts: one flattened pass vs per-token passes");
  bind(bench, "--L", "bench.L", "comma list of history lengths");
  bind(bench, "--M", "bench.M", "comma list of tokens per item");
  bind(bench, "--d", "bench.d", "model width");
  bind(bench, "--heads", "bench.heads", "attention heads");
  bind(bench, "--layers", "bench.layers", "encoder layers");

  auto* demo = app.add_subcommand("demo-beam", "beam search vs exhaustive search on random decoders");
  bind(demo, "--decoders", "demo.decoders", "number of seeded decoders");
  bind(demo, "--vocab", "demo.vocab", "vocabulary size |V|");
  bind(demo, "--length", "demo.length", "sequence length T");
  bind(demo, "--beams", "demo.beams", "comma list of beam widths");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate over alpha, N and beta grids");
  train_flags(sweep);
  eval_flags(sweep);
  sweep->get_option("--beta")->description("beta grid, lo:hi:step or comma list");
  bind(sweep, "--alpha-grid", "sweep.alpha", "lo:hi:step or comma list");
  bind(sweep, "--n-sem-grid", "sweep.n_sem", "comma list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    Context ctx;
    if (!config_path.empty()) ctx.settings.load_file(config_path);
    // on sweep, --beta is the grid
    for (auto& o : overrides)
      if (sweep->parsed() && o.rfind("train.beta=", 0) == 0) o = "sweep.beta=" + o.substr(11);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects section.key=value, got '" + o + "'");
      ctx.settings.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed) ctx.settings.set("run.seed", std::to_string(*seed));
    if (app.get_option("--workers")->count()) ctx.settings.set("run.workers", std::to_string(workers));
    if (app.get_option("--out")->count()) ctx.settings.set("run.out", out_dir);
    if (app.get_option("--tag")->count()) ctx.settings.set("run.tag", tag);
    ctx.seed = ctx.settings.size("run.seed", 42);
    ctx.workers = std::max<std::size_t>(1, ctx.settings.size("run.workers", 1));
    ctx.paths = {ctx.settings.str("run.out", "run"), ctx.settings.str("run.tag")};
    log(Level::debug, "seed " + std::to_string(ctx.seed) + ", out " + ctx.paths.out.string());

    if (prepare->parsed()) return cmd_prepare(ctx);
    if (pretrain->parsed()) return cmd_pretrain_cf(ctx);
    if (train_cmd->parsed()) return cmd_train(ctx);
    if (eval_cmd->parsed()) return cmd_eval(ctx);
    if (bench->parsed()) return cmd_bench(ctx);
    if (demo->parsed()) return cmd_demo_beam(ctx);
    if (sweep->parsed()) return cmd_sweep(ctx);
    return 2;
  } catch (const UsageError& e) {
    log(Level::error, e.what());
    return 2;
  } catch (const ConfigError& e) {
    log(Level::error, e.what());
    return 2;
  } catch (const DataError& e) {
    log(Level::error, e.what());
    return 2;
  } catch (const std::exception& e) {
    log(Level::error, std::string("internal error: ") + e.what());
    return 3;
  }
}
