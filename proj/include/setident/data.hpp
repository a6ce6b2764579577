#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "setident/error.hpp"

namespace setident {

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct ItemMeta {
  std::string category;
  std::string title;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  std::size_t i = 0;
  bool neg = false;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    i = 1;
  }
  if (i == s.size()) return false;
  std::int64_t v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = neg ? -v : v;
  return true;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return in;
}

}  // namespace detail

/// Parses "user_id<TAB>item_id<TAB>timestamp" lines; '#' lines and blank lines are skipped.
inline std::vector<Interaction> parse_interactions(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = detail::strip_cr(line);
    if (view.empty() || view.front() == '#') continue;
    const auto fields = detail::split_tabs(view);
    if (fields.size() != 3) throw ParseError("expected 3 tab-separated fields", lineno);
    Interaction x{std::string(fields[0]), std::string(fields[1]), 0};
    if (x.user_id.empty() || x.item_id.empty()) throw ParseError("empty user or item id", lineno);
    if (!detail::parse_int64(fields[2], x.timestamp))
      throw ParseError("bad timestamp '" + std::string(fields[2]) + "'", lineno);
    if (x.timestamp < 0) throw ParseError("negative timestamp", lineno);
    out.push_back(std::move(x));
  }
  if (out.empty()) throw DataError("empty dataset: no interactions");
  return out;
}

inline std::vector<Interaction> load_interactions(const std::string& path) {
  auto in = detail::open_input(path);
  try {
    return parse_interactions(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// "item_id<TAB>category<TAB>title" records.
inline std::map<std::string, ItemMeta> load_item_metadata(const std::string& path) {
  auto in = detail::open_input(path);
  std::map<std::string, ItemMeta> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = detail::strip_cr(line);
    if (view.empty() || view.front() == '#') continue;
    const auto f = detail::split_tabs(view);
    if (f.size() < 2 || f[0].empty()) throw ParseError(path + ": expected item_id<TAB>category[<TAB>title]", lineno);
    out[std::string(f[0])] = {std::string(f[1]), f.size() > 2 ? std::string(f[2]) : std::string()};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chronological split

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  bool operator==(const SplitSizes&) const = default;
};

constexpr std::size_t kMinUserLength = 5;

/// 8:1:1 per-user split sizes; nullopt when the user is too short to keep.
inline std::optional<SplitSizes> split_sizes(std::size_t n, std::size_t min_length = kMinUserLength) {
  if (n < min_length) return std::nullopt;
  const auto tenth = static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n)));
  SplitSizes s;
  s.test = std::max<std::size_t>(1, tenth);
  s.val = std::max<std::size_t>(1, tenth);
  s.train = n - s.val - s.test;
  return s;
}

struct UserSequence {
  std::string user_id;
  std::vector<Interaction> events;  // nondecreasing timestamps
  SplitSizes split;

  std::span<const Interaction> train() const { return std::span(events).first(split.train); }
  std::span<const Interaction> val() const { return std::span(events).subspan(split.train, split.val); }
  std::span<const Interaction> test() const { return std::span(events).subspan(split.train + split.val, split.test); }
};

/// Groups by user (sorted by id) with events stably sorted by timestamp.
inline std::vector<UserSequence> group_by_user(std::span<const Interaction> interactions) {
  std::map<std::string, std::vector<Interaction>> by_user;
  for (const auto& x : interactions) by_user[x.user_id].push_back(x);
  std::vector<UserSequence> out;
  out.reserve(by_user.size());
  for (auto& [user, events] : by_user) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
    out.push_back({user, std::move(events), {}});
  }
  return out;
}

struct SplitResult {
  std::vector<UserSequence> users;
  std::size_t dropped_users = 0;
};

inline SplitResult chronological_split(std::vector<UserSequence> users) {
  SplitResult r;
  for (auto& u : users) {
    const auto sizes = split_sizes(u.events.size());
    if (!sizes) {
      ++r.dropped_users;
      continue;
    }
    u.split = *sizes;
    r.users.push_back(std::move(u));
  }
  if (r.users.empty())
    throw DataError("all " + std::to_string(r.dropped_users) + " users dropped (fewer than " +
                    std::to_string(kMinUserLength) + " interactions each)");
  return r;
}

// ---------------------------------------------------------------------------
// Item partitions

struct WarmCold {
  std::vector<std::string> warm;  // sorted
  std::vector<std::string> cold;  // sorted

  bool is_warm(const std::string& id) const { return std::binary_search(warm.begin(), warm.end(), id); }
  bool is_cold(const std::string& id) const { return std::binary_search(cold.begin(), cold.end(), id); }
};

inline std::vector<std::string> catalog_of(std::span<const UserSequence> users) {
  std::set<std::string> items;
  for (const auto& u : users)
    for (const auto& e : u.events) items.insert(e.item_id);
  return {items.begin(), items.end()};
}

/// Warm items occur in some training segment; every other catalog item is cold.
inline WarmCold warm_cold_partition(std::span<const UserSequence> users, std::span<const std::string> catalog) {
  std::set<std::string> warm;
  for (const auto& u : users)
    for (const auto& e : u.train()) warm.insert(e.item_id);
  WarmCold wc;
  for (const auto& item : catalog) (warm.count(item) ? wc.warm : wc.cold).push_back(item);
  return wc;
}

inline std::map<std::string, std::size_t> training_counts(std::span<const UserSequence> users) {
  std::map<std::string, std::size_t> counts;
  for (const auto& u : users)
    for (const auto& e : u.train()) ++counts[e.item_id];
  return counts;
}

/// Warm items ranked by training count (desc, ties by id) and cut into G
/// equally sized bins; group 1 is the most popular.
inline std::map<std::string, std::size_t> popularity_groups(std::span<const UserSequence> users,
                                                            const WarmCold& wc, std::size_t groups = 4) {
  if (groups == 0) throw ContractError("popularity_groups: G must be >= 1");
  if (wc.warm.size() < groups)
    throw DataError("popularity_groups: " + std::to_string(wc.warm.size()) + " warm items for " +
                    std::to_string(groups) + " groups");
  const auto counts = training_counts(users);
  std::vector<std::pair<std::size_t, std::string>> ranked;
  for (const auto& item : wc.warm) {
    const auto it = counts.find(item);
    ranked.emplace_back(it == counts.end() ? 0 : it->second, item);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::map<std::string, std::size_t> out;
  for (std::size_t p = 0; p < ranked.size(); ++p) out[ranked[p].second] = 1 + p * groups / ranked.size();
  return out;
}

// ---------------------------------------------------------------------------
// Semantic vectors

struct SemanticVectors {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;

  const std::vector<double>& at(const std::string& item) const {
    const auto it = vectors.find(item);
    if (it == vectors.end()) throw DataError("item '" + item + "' has no semantic vector");
    return it->second;
  }
  bool contains(const std::string& item) const { return vectors.count(item) != 0; }
};

/// "SEMTXT1 <count> <dim>" header followed by "item_id v1 ... v_dim" lines.
inline SemanticVectors parse_semantic_vectors(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  SemanticVectors out;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::strip_cr(line).empty()) break;
  }
  {
    std::istringstream hs(line);
    std::string magic;
    if (!(hs >> magic) || magic != "SEMTXT1" || !(hs >> count >> out.dim))
      throw FormatError("semantic vectors: missing 'SEMTXT1 <count> <dim>' header");
  }
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls{std::string(detail::strip_cr(line))};
    std::string item;
    if (!(ls >> item)) continue;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw ParseError("semantic vectors: non-numeric value for '" + item + "'", lineno);
    if (v.size() != out.dim)
      throw ParseError("semantic vectors: '" + item + "' has " + std::to_string(v.size()) + " values, expected " +
                           std::to_string(out.dim),
                       lineno);
    for (double y : v)
      if (!std::isfinite(y)) throw ParseError("semantic vectors: non-finite value for '" + item + "'", lineno);
    if (!out.vectors.emplace(item, std::move(v)).second)
      throw ParseError("semantic vectors: duplicate item_id '" + item + "'", lineno);
  }
  if (out.vectors.size() != count)
    throw FormatError("semantic vectors: header declares " + std::to_string(count) + " vectors, found " +
                      std::to_string(out.vectors.size()));
  return out;
}

inline SemanticVectors load_semantic_vectors(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_semantic_vectors(in);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_semantic_vectors(std::ostream& out, const SemanticVectors& sv) {
  out << "SEMTXT1 " << sv.vectors.size() << ' ' << sv.dim << '\n';
  for (const auto& [item, v] : sv.vectors) {
    out << item;
    for (double x : v) out << ' ' << format_double(x);
    out << '\n';
  }
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Seeded stand-in for extracted text features: items of one category share a
/// centroid plus small noise; uncategorized items are independent. Vectors
/// have roughly unit norm and depend only on (seed, item, category).
inline SemanticVectors synth_semantic(std::span<const std::string> catalog,
                                      const std::map<std::string, ItemMeta>& metadata, std::size_t dim,
                                      std::uint64_t seed, double noise = 0.3) {
  if (dim == 0) throw ContractError("synth_semantic: d_sem must be >= 1");
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  auto draw = [&](std::uint64_t s) {
    std::mt19937_64 rng(s);
    std::normal_distribution<double> n(0.0, sd);
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    return v;
  };
  std::map<std::string, std::vector<double>> centroids;
  SemanticVectors out;
  out.dim = dim;
  for (const auto& item : catalog) {
    const auto it = metadata.find(item);
    auto own = draw(fnv1a(item, fnv1a("item", seed)));
    if (it == metadata.end() || it->second.category.empty()) {
      out.vectors[item] = std::move(own);
      continue;
    }
    const auto& cat = it->second.category;
    auto c = centroids.find(cat);
    if (c == centroids.end()) c = centroids.emplace(cat, draw(fnv1a(cat, fnv1a("category", seed)))).first;
    for (std::size_t j = 0; j < dim; ++j) own[j] = c->second[j] + noise * own[j];
    out.vectors[item] = std::move(own);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::vector<UserSequence> users;
  std::size_t dropped_users = 0;
  std::vector<std::string> catalog;  // sorted
  std::map<std::string, ItemMeta> metadata;
  WarmCold items;
  std::size_t group_count = 4;
  std::map<std::string, std::size_t> groups;
  SemanticVectors semantic;

  std::size_t catalog_index(const std::string& item) const {
    const auto it = std::lower_bound(catalog.begin(), catalog.end(), item);
    if (it == catalog.end() || *it != item) throw DataError("unknown item '" + item + "'");
    return static_cast<std::size_t>(it - catalog.begin());
  }
};

/// Groups, splits and partitions raw interactions. Semantic vectors are attached separately.
inline Dataset build_dataset(std::span<const Interaction> interactions, std::map<std::string, ItemMeta> metadata = {},
                             std::size_t group_count = 4) {
  auto split = chronological_split(group_by_user(interactions));
  Dataset ds;
  ds.users = std::move(split.users);
  ds.dropped_users = split.dropped_users;
  ds.catalog = catalog_of(ds.users);
  ds.metadata = std::move(metadata);
  ds.items = warm_cold_partition(ds.users, ds.catalog);
  ds.group_count = group_count;
  ds.groups = popularity_groups(ds.users, ds.items, group_count);
  return ds;
}

inline void require_semantic_coverage(const Dataset& ds) {
  for (const auto& item : ds.catalog)
    if (!ds.semantic.contains(item)) throw DataError("item '" + item + "' has no semantic vector");
}

// Snapshot: line-oriented text; "STSNAP1" first line.
inline std::string serialize_snapshot(const Dataset& ds) {
  std::ostringstream out;
  out << "STSNAP1\n";
  out << "dropped_users\t" << ds.dropped_users << '\n';
  out << "groups\t" << ds.group_count << '\n';
  for (const auto& u : ds.users) {
    out << "U\t" << u.user_id << '\t' << u.split.train << '\t' << u.split.val << '\t' << u.split.test << '\n';
    for (const auto& e : u.events) out << "E\t" << e.item_id << '\t' << e.timestamp << '\n';
  }
  for (const auto& item : ds.catalog) {
    const auto m = ds.metadata.find(item);
    const auto g = ds.groups.find(item);
    out << "I\t" << item << '\t' << (ds.items.is_warm(item) ? "warm" : "cold") << '\t'
        << (g == ds.groups.end() ? 0 : g->second) << '\t' << (m == ds.metadata.end() ? "" : m->second.category)
        << '\t' << (m == ds.metadata.end() ? "" : m->second.title) << '\n';
  }
  write_semantic_vectors(out, ds.semantic);
  return out.str();
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string content_hash(std::string_view bytes) { return hash_hex(fnv1a(bytes)); }

/// Writes the snapshot and returns its content hash.
inline std::string save_snapshot(const Dataset& ds, const std::string& path) {
  const std::string text = serialize_snapshot(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write snapshot: " + path);
  out << text;
  return content_hash(text);
}

inline Dataset parse_snapshot(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || detail::strip_cr(line) != "STSNAP1") throw FormatError("snapshot: missing STSNAP1 header");
  auto to_size = [&](std::string_view s) {
    std::int64_t v;
    if (!detail::parse_int64(s, v) || v < 0) throw ParseError("snapshot: bad count", lineno);
    return static_cast<std::size_t>(v);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("SEMTXT1", 0) == 0) {
      std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::istringstream sv(line + "\n" + rest);
      ds.semantic = parse_semantic_vectors(sv);
      break;
    }
    const auto f = detail::split_tabs(detail::strip_cr(line));
    if (f[0] == "dropped_users" && f.size() == 2) {
      ds.dropped_users = to_size(f[1]);
    } else if (f[0] == "groups" && f.size() == 2) {
      ds.group_count = to_size(f[1]);
    } else if (f[0] == "U" && f.size() == 5) {
      ds.users.push_back({std::string(f[1]), {}, {to_size(f[2]), to_size(f[3]), to_size(f[4])}});
    } else if (f[0] == "E" && f.size() == 3 && !ds.users.empty()) {
      std::int64_t ts;
      if (!detail::parse_int64(f[2], ts)) throw ParseError("snapshot: bad timestamp", lineno);
      ds.users.back().events.push_back({ds.users.back().user_id, std::string(f[1]), ts});
    } else if (f[0] == "I" && f.size() == 6) {
      const std::string item(f[1]);
      ds.catalog.push_back(item);
      (f[2] == "warm" ? ds.items.warm : ds.items.cold).push_back(item);
      if (const auto g = to_size(f[3]); g > 0) ds.groups[item] = g;
      if (!f[4].empty() || !f[5].empty()) ds.metadata[item] = {std::string(f[4]), std::string(f[5])};
    } else {
      throw ParseError("snapshot: unrecognized record", lineno);
    }
  }
  for (const auto& u : ds.users)
    if (u.split.train + u.split.val + u.split.test != u.events.size())
      throw FormatError("snapshot: split sizes of user '" + u.user_id + "' do not cover its events");
  return ds;
}

inline Dataset load_snapshot(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_snapshot(in);
}

// ---------------------------------------------------------------------------
// Synthetic sequential data

struct FixtureOptions {
  std::size_t users = 50;
  std::size_t items = 30;
  std::size_t cold_items = 3;   // appear only as some users' final interaction
  std::size_t min_length = 8;
  std::size_t max_length = 10;
  std::size_t categories = 5;
  std::size_t cold_every = 5;   // every k-th user ends on a cold item
  std::uint64_t seed = 7;
};

struct Fixture {
  std::vector<Interaction> interactions;
  std::map<std::string, ItemMeta> metadata;
};

inline std::string fixture_id(char prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%02zu", prefix, i);
  return buf;
}

/// Users walk a fixed random successor cycle over the warm items, so the next
/// item is a function of the last one. Categories follow contiguous stretches
/// of the cycle.
inline Fixture make_sequential_fixture(const FixtureOptions& opt = {}) {
  if (opt.cold_items >= opt.items || opt.min_length > opt.max_length || opt.min_length < kMinUserLength)
    throw ContractError("make_sequential_fixture: inconsistent options");
  std::mt19937_64 rng(opt.seed);
  const std::size_t warm = opt.items - opt.cold_items;
  std::vector<std::size_t> cycle(warm);
  for (std::size_t i = 0; i < warm; ++i) cycle[i] = i;
  std::shuffle(cycle.begin(), cycle.end(), rng);
  std::vector<std::size_t> next(warm), pos(warm);
  for (std::size_t p = 0; p < warm; ++p) {
    next[cycle[p]] = cycle[(p + 1) % warm];
    pos[cycle[p]] = p;
  }

  Fixture fx;
  const std::size_t per_category = std::max<std::size_t>(1, (warm + opt.categories - 1) / opt.categories);
  for (std::size_t i = 0; i < opt.items; ++i) {
    const std::size_t cat = i < warm ? pos[i] / per_category : (i - warm) % opt.categories;
    fx.metadata[fixture_id('i', i)] = {"c" + std::to_string(cat), "item " + std::to_string(i)};
  }
  std::uniform_int_distribution<std::size_t> start(0, warm - 1);
  std::uniform_int_distribution<std::size_t> len(opt.min_length, opt.max_length);
  std::size_t cold_next = 0;
  for (std::size_t u = 0; u < opt.users; ++u) {
    const std::string user = fixture_id('u', u);
    std::size_t item = start(rng);
    const std::size_t n = len(rng);
    const std::int64_t base = static_cast<std::int64_t>(1000 * (u + 1));
    for (std::size_t t = 0; t < n; ++t) {
      std::size_t emitted = item;
      if (t + 1 == n && opt.cold_items > 0 && opt.cold_every > 0 && u % opt.cold_every == 0)
        emitted = warm + (cold_next++ % opt.cold_items);
      fx.interactions.push_back({user, fixture_id('i', emitted), base + static_cast<std::int64_t>(10 * t)});
      item = next[item];
    }
  }
  return fx;
}

inline void write_interactions(std::ostream& out, std::span<const Interaction> xs) {
  for (const auto& x : xs) out << x.user_id << '\t' << x.item_id << '\t' << x.timestamp << '\n';
}

inline void write_item_metadata(std::ostream& out, const std::map<std::string, ItemMeta>& meta) {
  for (const auto& [item, m] : meta) out << item << '\t' << m.category << '\t' << m.title << '\n';
}

}  // namespace setident
