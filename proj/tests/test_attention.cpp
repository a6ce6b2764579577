#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "setident/attention.hpp"

using namespace setident;

namespace {

// Closed-form visibility, written independently of build_sparse_mask.
bool sparse_visible(std::size_t q, std::size_t k, std::size_t items, std::size_t m) {
  const std::size_t h = items * m;
  if (q == k) return true;
  if (k >= h) return false;  // only self among the query slots
  if (q >= h) return true;
  return k / m < q / m;
}

std::vector<std::vector<std::size_t>> rows_of(const AttentionMask& mask) {
  std::vector<std::vector<std::size_t>> out(mask.size());
  for (std::size_t q = 0; q < mask.size(); ++q)
    for (std::size_t k = 0; k < mask.size(); ++k)
      if (mask.at(q, k)) out[q].push_back(k);
  return out;
}

std::vector<std::size_t> shared_positions(std::size_t items, std::size_t m) {
  std::vector<std::size_t> p;
  for (std::size_t l = 0; l <= items; ++l) p.insert(p.end(), m, l);
  return p;
}

}  // namespace

TEST(SparseMask, SingleItemSingleToken) {
  const auto rows = rows_of(build_sparse_mask(1, 1));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(rows[1], (std::vector<std::size_t>{0, 1}));
}

TEST(SparseMask, TwoItemsTwoTokens) {
  const auto rows = rows_of(build_sparse_mask(2, 2));
  const std::vector<std::vector<std::size_t>> want{{0}, {1}, {0, 1, 2}, {0, 1, 3}, {0, 1, 2, 3, 4}, {0, 1, 2, 3, 5}};
  EXPECT_EQ(rows, want);
}

TEST(SparseMask, SingleTokenIsItemCausal) {
  for (std::size_t l = 1; l <= 6; ++l) {
    const AttentionMask mask = build_sparse_mask(l, 1);
    const AttentionMask causal = build_causal_mask(l + 1);
    EXPECT_EQ(mask, causal) << "L=" << l;
    EXPECT_EQ(mask.visible_in_row(l), l + 1);
  }
}

TEST(SparseMask, ZeroSizesAreContractErrors) {
  EXPECT_THROW(build_sparse_mask(0, 2), ContractError);
  EXPECT_THROW(build_sparse_mask(2, 0), ContractError);
  EXPECT_THROW(build_causal_mask(0), ContractError);
}

TEST(SparseMask, ExhaustivePredicateCheck) {
  for (std::size_t l = 1; l <= 8; ++l) {
    for (std::size_t m = 1; m <= 6; ++m) {
      const AttentionMask mask = build_sparse_mask(l, m);
      ASSERT_EQ(mask.size(), l * m + m);
      for (std::size_t q = 0; q < mask.size(); ++q)
        for (std::size_t k = 0; k < mask.size(); ++k)
          ASSERT_EQ(mask.at(q, k), sparse_visible(q, k, l, m)) << "L=" << l << " M=" << m << " (" << q << "," << k << ")";
    }
  }
}

TEST(SparseMask, PaddingIsNeverVisible) {
  const AttentionMask padded = pad_mask(build_sparse_mask(3, 2), 12);
  for (std::size_t q = 0; q < 12; ++q)
    for (std::size_t k = 8; k < 12; ++k) EXPECT_FALSE(padded.at(q, k));
}

TEST(CausalMask, Examples) {
  EXPECT_TRUE(build_causal_mask(1).at(0, 0));
  const AttentionMask m3 = build_causal_mask(3);
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(m3.at(q, k), k <= q);
  const AttentionMask m9 = build_causal_mask(9);
  for (std::size_t q = 0; q < 9; ++q) EXPECT_EQ(m9.visible_in_row(q), q + 1);
}

TEST(FlatCausalMask, IsPlainCausalOverFlattenedSequence) {
  EXPECT_EQ(build_flat_causal_mask(3, 2), build_causal_mask(8));
  EXPECT_THROW(build_flat_causal_mask(0, 2), ContractError);
}

TEST(Encoder, SingleTokenShape) {
  std::mt19937_64 rng(3);
  EncoderConfig cfg{8, 2, 2, 2, 16, 4};
  const Encoder enc(cfg, rng);
  const std::vector<std::size_t> pos{0};
  const Tensor out = enc.encode(Tensor::randn(1, 8, 1.0, rng), pos, build_causal_mask(1));
  EXPECT_EQ(out.shape(), (Shape{1, 8}));
}

TEST(Encoder, ZeroLayersAddsPositionEmbedding) {
  std::mt19937_64 rng(4);
  EncoderConfig cfg{6, 2, 0, 2, 16, 5};
  const Encoder enc(cfg, rng);
  const Tensor x = Tensor::randn(4, 6, 1.0, rng);
  const std::vector<std::size_t> pos{3, 3, 1, 4};
  const Tensor out = enc.encode(x, pos, build_causal_mask(4));
  const Tensor& table = enc.parameters()[0].tensor;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(out.at(r, c), x.at(r, c) + table.at(pos[r], c));
}

TEST(Encoder, SizeErrors) {
  std::mt19937_64 rng(5);
  EncoderConfig cfg{4, 2, 1, 2, 6, 3};
  const Encoder enc(cfg, rng);
  const std::vector<std::size_t> pos3{0, 1, 2};
  EXPECT_THROW(enc.encode(Tensor::zeros(3, 4), pos3, build_causal_mask(4)), DimensionError);
  EXPECT_THROW(enc.encode(Tensor::zeros(3, 5), pos3, build_causal_mask(3)), DimensionError);
  const std::vector<std::size_t> pos7(7, 0);
  EXPECT_THROW(enc.encode(Tensor::zeros(7, 4), pos7, build_causal_mask(7)), DimensionError);
  const std::vector<std::size_t> bad{0, 1, 3};
  EXPECT_THROW(enc.encode(Tensor::zeros(3, 4), bad, build_causal_mask(3)), DimensionError);
}

TEST(EncoderConfig, Validation) {
  EXPECT_THROW((EncoderConfig{6, 4, 1, 2, 8, 8}.validate()), ConfigError);
  EXPECT_THROW((EncoderConfig{0, 1, 1, 2, 8, 8}.validate()), ConfigError);
  EXPECT_NO_THROW((EncoderConfig{8, 4, 1, 2, 8, 8}.validate()));
}

TEST(Encoder, AttentionRowsAreStochasticOverVisibleKeys) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t items = 4, m = 3;
    EncoderConfig cfg{8, 2, 2, 2, 64, 8};
    const Encoder enc(cfg, rng);
    const AttentionMask mask = build_sparse_mask(items, m);
    std::vector<Tensor> weights;
    enc.encode(Tensor::randn(mask.size(), 8, 1.0, rng), shared_positions(items, m), mask, {nullptr, &weights});
    ASSERT_EQ(weights.size(), cfg.layers * cfg.heads);
    for (const auto& w : weights) {
      for (std::size_t q = 0; q < mask.size(); ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < mask.size(); ++k) {
          if (mask.at(q, k)) s += w.at(q, k);
          else EXPECT_EQ(w.at(q, k), 0.0);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

// Shuffle the tokens of one history item; query slots must not notice.
TEST(Encoder, QueryOutputsIgnoreWithinIdentifierOrder) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_l(1, 5), pick_m(2, 4);
    const std::size_t items = pick_l(rng), m = pick_m(rng);
    EncoderConfig cfg{8, 2, 2, 2, 64, 8};
    const Encoder enc(cfg, rng);
    const AttentionMask mask = build_sparse_mask(items, m);
    const auto pos = shared_positions(items, m);
    const Tensor x = Tensor::randn(mask.size(), 8, 1.0, rng);

    std::uniform_int_distribution<std::size_t> which(0, items - 1);
    const std::size_t target = which(rng);
    std::vector<std::size_t> order(mask.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(target * m),
                 order.begin() + static_cast<std::ptrdiff_t>(target * m + m), rng);
    const Tensor permuted = gather_rows(x, order);

    const Tensor a = enc.encode(x, pos, mask);
    const Tensor b = enc.encode(permuted, pos, mask);
    for (std::size_t q = items * m; q < mask.size(); ++q)
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.at(q, c), b.at(q, c), 1e-9) << "seed " << seed;
  }
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  EncoderConfig cfg{4, 2, 1, 2, 16, 4};
  const Encoder enc(cfg, rng);
  const AttentionMask mask = build_sparse_mask(2, 2);
  const auto pos = shared_positions(2, 2);
  const Tensor x = Tensor::randn(6, 4, 1.0, rng, true);
  const Tensor w = Tensor::randn(6, 4, 1.0, rng);
  std::vector<Tensor> params{x};
  Tensor key_bias;
  for (const auto& p : enc.parameters()) {
    // softmax is shift-invariant, so the key bias gradient is exactly zero; only check that
    if (p.name == "layer0.k.bias") key_bias = p.tensor;
    else params.push_back(p.tensor);
  }
  auto loss = [&] { return dot(enc.encode(x, pos, mask), w); };
  const auto r = setident::testing::grad_check(loss, params);
  EXPECT_LT(r.worst_relative_error, 1e-4);
  key_bias.zero_grad();
  backward(loss());
  for (double g : key_bias.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(Encoder, CountsPasses) {
  std::mt19937_64 rng(2);
  const Encoder enc(EncoderConfig{4, 1, 1, 2, 8, 4}, rng);
  const std::vector<std::size_t> pos{0, 1};
  for (int i = 0; i < 3; ++i) enc.encode(Tensor::zeros(2, 4), pos, build_causal_mask(2));
  EXPECT_EQ(enc.passes(), 3u);
  enc.reset_passes();
  EXPECT_EQ(enc.passes(), 0u);
}

TEST(MacCount, ClosedForm) {
  const MacCounter c = count_attention_macs(10, 8, 2);
  EXPECT_EQ(c.projections, 4u * 10 * 8 * 8);
  EXPECT_EQ(c.scores, 10u * 10 * 8);
  EXPECT_EQ(c.mixing, 10u * 10 * 8);
}

TEST(MacCount, DoublingLengthQuadruplesScores) {
  for (std::uint64_t t : {3u, 17u, 64u}) EXPECT_EQ(count_attention_macs(2 * t, 64, 4).scores, 4 * count_attention_macs(t, 64, 4).scores);
}

TEST(MacCount, InstrumentedEncoderMatchesClosedForm) {
  std::mt19937_64 rng(8);
  const Encoder enc(EncoderConfig{8, 2, 3, 2, 32, 4}, rng);
  const AttentionMask mask = build_sparse_mask(3, 2);
  MacCounter c;
  enc.encode(Tensor::zeros(8, 8), shared_positions(3, 2), mask, {&c, nullptr});
  const MacCounter one = count_attention_macs(8, 8, 2);
  EXPECT_EQ(c.passes, 1u);
  EXPECT_EQ(c.total(), 3 * one.total());
}

TEST(MacCount, ScoreTermScalesAsSquaredSetSize) {
  // QKᵀ over the flattened input is (LM+M)²·d, i.e. M²(L+1)²·d.
  for (std::uint64_t m = 1; m <= 6; ++m)
    EXPECT_EQ(count_attention_macs(32 * m + m, 64, 4).scores, m * m * 33 * 33 * 64);
}

TEST(MacCount, OriginalOverFlattenedApproachesM) {
  for (std::uint64_t m = 1; m <= 6; ++m) {
    auto ratio = [&](std::uint64_t l) {
      const double orig = static_cast<double>(m * count_attention_macs(l * m + 1, 64, 4).total());
      const double flat = static_cast<double>(count_attention_macs(l * m + m, 64, 4).total());
      return orig / flat;
    };
    const double r32 = ratio(32);
    EXPECT_GE(r32, 0.8 * m);
    EXPECT_LE(r32, 1.2 * m);
    EXPECT_LE(std::abs(ratio(512) - m), std::abs(r32 - m) + 1e-12);
  }
}
