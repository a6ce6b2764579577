#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "setident/eval.hpp"

using namespace setident;

namespace {

struct Trained {
  Dataset ds;
  BprModel bpr;
  TrainConfig cfg;
  std::optional<SetRecModel> model;
  std::optional<TokenCorpus> corpus;
};

const Trained& trained() {
  static const Trained t = [] {
    const auto raw = make_sequential_fixture();
    Trained r;
    r.ds = build_dataset(raw.interactions, raw.metadata);
    r.ds.semantic = synth_semantic(r.ds.catalog, r.ds.metadata, 16, 1);
    BprOptions bo;
    bo.dim = 8;
    bo.epochs = 30;
    r.bpr = pretrain_cf(r.ds.users, bo);
    r.cfg.d = 8;
    r.cfg.heads = 2;
    r.cfg.layers = 1;
    r.cfg.ae_hidden = {16, 8};
    r.cfg.epochs = 3;
    auto res = train(r.ds, r.cfg, &r.bpr.items);
    r.model.emplace(std::move(res.model));
    r.corpus.emplace(r.model->build_corpus(r.ds.catalog, r.ds.semantic));
    return r;
  }();
  return t;
}

// rank by sorting a copy: (score desc, id asc)
std::size_t sorted_rank(std::vector<ItemScore> scores, const std::string& target) {
  std::sort(scores.begin(), scores.end(), [](const ItemScore& a, const ItemScore& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
  });
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i].item == target) return i + 1;
  return 0;
}

}  // namespace

TEST(Metrics, RecallExamples) {
  EXPECT_EQ(recall_at_k(1, 5), 1.0);
  EXPECT_EQ(recall_at_k(6, 5), 0.0);
  EXPECT_EQ(recall_at_k(5, 5), 1.0);
  EXPECT_THROW(recall_at_k(0, 5), ContractError);
}

TEST(Metrics, NdcgExamples) {
  EXPECT_EQ(ndcg_at_k(1, 5), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(3, 5), 0.5);
  EXPECT_EQ(ndcg_at_k(11, 10), 0.0);
  EXPECT_NEAR(ndcg_at_k(2, 10), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_THROW(ndcg_at_k(0, 5), ContractError);
}

TEST(Metrics, TargetRankBreaksTiesById) {
  const std::vector<ItemScore> s{{"b", 1.0}, {"a", 1.0}, {"c", 2.0}, {"d", 0.5}};
  EXPECT_EQ(target_rank(s, "c"), 1u);
  EXPECT_EQ(target_rank(s, "a"), 2u);
  EXPECT_EQ(target_rank(s, "b"), 3u);
  EXPECT_EQ(target_rank(s, "d"), 4u);
  EXPECT_THROW(target_rank(s, "zz"), ContractError);
}

TEST(Metrics, AggregateMatchesRecountOnRandomScores) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> coarse(0, 6);  // forces ties
    std::vector<EvalInstance> inst;
    std::vector<std::vector<ItemScore>> scores;
    for (int i = 0; i < 40; ++i) {
      std::vector<ItemScore> s;
      for (int j = 0; j < 50; ++j) s.push_back({fixture_id('i', static_cast<std::size_t>(j)), coarse(rng) * 0.5});
      inst.push_back({"u", {}, s[rng() % s.size()].item});
      scores.push_back(std::move(s));
    }
    std::map<const EvalInstance*, std::size_t> index;
    for (std::size_t i = 0; i < inst.size(); ++i) index[&inst[i]] = i;
    EvalOptions opt;
    opt.ks = {1, 5, 10, 20};
    const auto r = evaluate_instances(inst, [&](const EvalInstance& e) { return scores[index.at(&e)]; }, opt);

    for (std::size_t k : opt.ks) {
      double rec = 0.0, ndcg = 0.0;
      for (std::size_t i = 0; i < inst.size(); ++i) {
        const std::size_t rank = sorted_rank(scores[i], inst[i].target);
        if (rank <= k) {
          rec += 1.0;
          ndcg += std::log(2.0) / std::log(rank + 1.0);
        }
      }
      EXPECT_NEAR(r.at_k.at(k).recall, rec / 40.0, 1e-12) << "seed " << seed << " K " << k;
      EXPECT_NEAR(r.at_k.at(k).ndcg, ndcg / 40.0, 1e-12) << "seed " << seed << " K " << k;
      EXPECT_EQ(r.at_k.at(k).count, 40u);
    }
  }
}

TEST(Metrics, OracleScorerIsPerfect) {
  const std::vector<EvalInstance> inst{{"u1", {"a"}, "x"}, {"u2", {"b"}, "y"}, {"u3", {}, "z"}};
  const std::vector<std::string> items{"a", "b", "x", "y", "z"};
  const auto r = evaluate_instances(
      inst,
      [&](const EvalInstance& e) {
        std::vector<ItemScore> s;
        for (const auto& it : items) s.push_back({it, it == e.target ? 1.0 : 0.0});
        return s;
      },
      EvalOptions{});
  EXPECT_EQ(r.at_k.at(5).recall, 1.0);
  EXPECT_EQ(r.at_k.at(5).ndcg, 1.0);
  EXPECT_EQ(r.at_k.at(10).recall, 1.0);
}

TEST(Metrics, EmptyInstanceSetReportsZeroCount) {
  const std::vector<EvalInstance> none;
  const auto r = evaluate_instances(none, [](const EvalInstance&) { return std::vector<ItemScore>{}; }, EvalOptions{});
  EXPECT_EQ(r.instances, 0u);
  EXPECT_EQ(r.at_k.at(5).count, 0u);
  EXPECT_EQ(r.at_k.at(5).recall, 0.0);
}

TEST(Metrics, ParseSetting) {
  EXPECT_EQ(parse_setting("warm"), Setting::warm);
  EXPECT_EQ(to_string(parse_setting("cold")), "cold");
  EXPECT_THROW(parse_setting("hot"), ContractError);
}

TEST(Evaluate, InstancesFollowSplits) {
  const auto& t = trained();
  const auto all = test_instances(t.ds, Setting::all, 20);
  std::size_t tests = 0;
  for (const auto& u : t.ds.users) tests += u.split.test;
  EXPECT_EQ(all.size(), tests);
  const auto warm = test_instances(t.ds, Setting::warm, 20);
  const auto cold = test_instances(t.ds, Setting::cold, 20);
  EXPECT_EQ(warm.size() + cold.size(), all.size());
  EXPECT_GT(cold.size(), 0u);
  for (const auto& i : cold) EXPECT_TRUE(t.ds.items.is_cold(i.target));
  for (const auto& i : test_instances(t.ds, Setting::all, 3)) EXPECT_LE(i.history.size(), 3u);
}

TEST(Evaluate, MatchesBruteForceRecomputation) {
  const auto& t = trained();
  for (Setting s : {Setting::all, Setting::warm, Setting::cold}) {
    for (double beta : {0.0, 0.3, 1.0}) {
      const auto r = evaluate(*t.model, *t.corpus, t.ds, s, beta);
      const auto inst = test_instances(t.ds, s, t.cfg.max_history);
      const auto& cand = candidate_items(t.ds, s);
      double rec5 = 0, ndcg5 = 0, rec10 = 0, ndcg10 = 0;
      for (const auto& i : inst) {
        const std::size_t rank = sorted_rank(t.model->score(i.history, *t.corpus, beta, &cand), i.target);
        ASSERT_GT(rank, 0u);
        if (rank <= 5) rec5 += 1, ndcg5 += 1.0 / std::log2(rank + 1.0);
        if (rank <= 10) rec10 += 1, ndcg10 += 1.0 / std::log2(rank + 1.0);
      }
      const double n = static_cast<double>(inst.size());
      EXPECT_NEAR(r.at_k.at(5).recall, rec5 / n, 1e-12);
      EXPECT_NEAR(r.at_k.at(5).ndcg, ndcg5 / n, 1e-12);
      EXPECT_NEAR(r.at_k.at(10).recall, rec10 / n, 1e-12);
      EXPECT_NEAR(r.at_k.at(10).ndcg, ndcg10 / n, 1e-12);
      for (const auto& [k, m] : r.at_k) {
        EXPECT_GE(m.recall, 0.0);
        EXPECT_LE(m.recall, 1.0);
        EXPECT_GE(m.ndcg, 0.0);
        EXPECT_LE(m.ndcg, m.recall);
      }
    }
  }
}

TEST(Evaluate, BetaSweepGivesOneReportPerPoint) {
  const auto& t = trained();
  std::vector<MetricsReport> reports;
  for (int i = 0; i <= 10; ++i) reports.push_back(evaluate(*t.model, *t.corpus, t.ds, Setting::all, i / 10.0));
  ASSERT_EQ(reports.size(), 11u);
  for (int i = 0; i <= 10; ++i) EXPECT_DOUBLE_EQ(reports[i].beta, i / 10.0);
  std::ostringstream csv;
  write_report_csv(csv, reports);
  const std::string text = csv.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 11 * 2);
}

TEST(Evaluate, ColdSettingAtBetaOneIsFinite) {
  const auto& t = trained();
  const auto r = evaluate(*t.model, *t.corpus, t.ds, Setting::cold, 1.0);
  EXPECT_GT(r.instances, 0u);
  for (const auto& [k, m] : r.at_k) {
    EXPECT_TRUE(std::isfinite(m.recall));
    EXPECT_TRUE(std::isfinite(m.ndcg));
  }
  EXPECT_TRUE(r.by_group.empty());
}

TEST(Evaluate, GroupCountsPartitionWarmInstances) {
  const auto& t = trained();
  const auto r = evaluate(*t.model, *t.corpus, t.ds, Setting::warm, 0.5);
  std::size_t sum = 0;
  for (const auto& [g, m] : r.by_group) {
    EXPECT_GE(g, 1u);
    EXPECT_LE(g, t.ds.group_count);
    sum += m.count;
  }
  EXPECT_EQ(sum, r.instances);
  EXPECT_EQ(r.instances, test_instances(t.ds, Setting::warm, 20).size());
}

TEST(Evaluate, WorkersDoNotChangeResults) {
  const auto& t = trained();
  EvalOptions one, four;
  four.workers = 4;
  const auto a = evaluate(*t.model, *t.corpus, t.ds, Setting::all, 0.5, one);
  const auto b = evaluate(*t.model, *t.corpus, t.ds, Setting::all, 0.5, four);
  for (const auto& [k, m] : a.at_k) {
    EXPECT_EQ(m.recall, b.at_k.at(k).recall);
    EXPECT_EQ(m.ndcg, b.at_k.at(k).ndcg);
  }
}

TEST(Evaluate, ReportFormats) {
  MetricsReport r;
  r.setting = "warm";
  r.beta = 0.5;
  r.instances = 4;
  r.at_k[5] = {0.5, 0.25, 4};
  r.by_group[1] = {1, 1, 2};
  std::ostringstream csv, txt;
  const std::vector<MetricsReport> rs{r};
  write_report_csv(csv, rs);
  EXPECT_EQ(csv.str(), "setting,beta,k,group,recall,ndcg,count\nwarm,0.5,5,all,0.5,0.25,4\nwarm,0.5,10,G1,1,1,2\n");
  write_report_summary(txt, rs);
  EXPECT_NE(txt.str().find("Recall@5"), std::string::npos);
  EXPECT_NE(txt.str().find("one instance"), std::string::npos);
}

TEST(Bench, SingleTokenRatioIsOne) {
  const auto r = bench_generation(8, 1, 16);
  EXPECT_NEAR(r.ratio(), 1.0, 1e-12);
  EXPECT_EQ(r.flattened_calls, 1u);
  EXPECT_EQ(r.original_calls, 1u);
}

TEST(Bench, RatioNearMAtDeskScale) {
  const auto r = bench_generation(32, 4, 64);
  EXPECT_GE(r.ratio(), 3.2);
  EXPECT_LE(r.ratio(), 4.8);
  EXPECT_EQ(r.flattened_calls, 1u);
  EXPECT_EQ(r.original_calls, 4u);
}

TEST(Bench, CountsMatchClosedForm) {
  const std::size_t L = 6, M = 3, d = 8;
  const auto r = bench_generation(L, M, d, 2, 1);
  EXPECT_EQ(r.flattened_macs, count_attention_macs(L * M + M, d, 2).total());
  EXPECT_EQ(r.original_macs, M * count_attention_macs(L * M + 1, d, 2).total());
}

TEST(Bench, CsvFormat) {
  const std::vector<BenchResult> rows{{2, 1, 4, 10, 10, 1, 1}};
  std::ostringstream out;
  write_bench_csv(out, rows);
  EXPECT_EQ(out.str(), "L,M,d,flattened_macs,original_macs,ratio,flattened_calls,original_calls\n2,1,4,10,10,1,1,1\n");
  EXPECT_THROW(bench_generation(0, 1, 1), ContractError);
}

TEST(Beam, ExhaustiveWidthEqualsGlobal) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto dec = BaselineDecoder::random(3, 3, seed);
    EXPECT_EQ(beam_search(dec, 27), global_search(dec));
    EXPECT_EQ(beam_search(dec, 100), global_search(dec));
  }
}

TEST(Beam, DeterministicDecoderFoundByGreedy) {
  BaselineDecoder dec(3, 3);
  const std::vector<std::size_t> path{2, 0, 1};
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<double> p(3, 0.0);
    p[path[t]] = 1.0;
    dec.set(std::span(path).first(t), p);
  }
  const auto top = beam_search(dec, 1);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].tokens, path);
  EXPECT_EQ(top[0].prob, 1.0);
}

TEST(Beam, TwoStepCounterexample) {
  // a=0 b=1; after a both tokens 0.5; after b token 1 (y) has 0.9
  BaselineDecoder dec(2, 2);
  const std::vector<double> first{0.6, 0.4}, after_a{0.5, 0.5}, after_b{0.1, 0.9};
  dec.set({}, first);
  const std::vector<std::size_t> a{0}, b{1};
  dec.set(a, after_a);
  dec.set(b, after_b);

  // enumerate the four sequences by hand
  double best = 0.0;
  std::vector<std::size_t> arg;
  for (std::size_t x : {0, 1})
    for (std::size_t y : {0, 1}) {
      const double p = first[x] * (x == 0 ? after_a : after_b)[y];
      if (p > best) best = p, arg = {x, y};
    }
  EXPECT_NEAR(best, 0.36, 1e-15);
  EXPECT_EQ(arg, (std::vector<std::size_t>{1, 1}));

  const auto greedy = beam_search(dec, 1);
  EXPECT_EQ(greedy[0].tokens[0], 0u);
  EXPECT_NEAR(greedy[0].prob, 0.30, 1e-15);
  const auto global = global_search(dec);
  EXPECT_EQ(global[0].tokens, arg);
  EXPECT_NEAR(global[0].prob, 0.36, 1e-15);
  EXPECT_EQ(beam_search(dec, 2)[0].tokens, arg);
}

TEST(Beam, GlobalProbabilitiesSumToOne) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto all = global_search(BaselineDecoder::random(8, 3, seed));
    ASSERT_EQ(all.size(), 512u);
    double s = 0.0;
    for (const auto& q : all) s += q.prob;
    EXPECT_NEAR(s, 1.0, 1e-9);
    EXPECT_TRUE(std::is_sorted(all.begin(), all.end(), sequence_before));
  }
}

TEST(Beam, GlobalSearchRejectsHugeSpaces) {
  EXPECT_THROW(global_search(BaselineDecoder(1001, 2)), ContractError);
  EXPECT_THROW(beam_search(BaselineDecoder(2, 2), 0), ContractError);
}

TEST(Beam, SetValidatesProbabilities) {
  BaselineDecoder dec(2, 1);
  const std::vector<double> bad{0.5, 0.6}, wrong_size{1.0};
  EXPECT_THROW(dec.set({}, bad), ContractError);
  EXPECT_THROW(dec.set({}, wrong_size), DimensionError);
}

TEST(Beam, NarrowBeamLosesToGlobalOnRandomDecoders) {
  const std::vector<std::size_t> beams{1, 2, 4};
  const auto rows = beam_vs_global(100, 8, 3, beams, 1);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_LE(r.beam_recall, r.global_recall);
    EXPECT_EQ(r.global_recall, 1.0);
  }
  EXPECT_LT(rows[1].beam_recall, rows[1].global_recall);
  EXPECT_GT(rows[0].misses, 0u);
}

TEST(Beam, RecallNondecreasingInWidthPerDecoder) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto dec = BaselineDecoder::random(8, 3, seed);
    const auto best = global_search(dec).front().tokens;
    bool hit_before = false;
    for (std::size_t k = 1; k <= 512; k *= 2) {
      const bool hit = beam_search(dec, k).front().tokens == best;
      EXPECT_TRUE(hit || !hit_before) << "seed " << seed << " K " << k;
      hit_before = hit;
    }
    EXPECT_TRUE(hit_before);
  }
}
