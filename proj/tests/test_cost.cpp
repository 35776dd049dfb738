#include <agmb/cost.hpp>
#include <agmb/gmhsa.hpp>

#include <gtest/gtest.h>

#include <array>
#include <random>

#include "oracles.hpp"

using namespace agmb;

TEST(FlopsMhsa, KnownValues) {
  EXPECT_EQ(flops_mhsa(16, 40, 40), 83'558'400u);
  EXPECT_EQ(flops_mhsa(16, 56, 56), 317'915'136u);
  EXPECT_EQ(flops_mhsa(1, 1, 1), 6u);
}

TEST(FlopsMhsa, MatchesTermByTermCount) {
  for (std::uint64_t c : {1u, 3u, 16u, 64u})
    for (std::uint64_t h : {1u, 7u, 40u})
      for (std::uint64_t w : {2u, 9u, 40u}) EXPECT_EQ(flops_mhsa(c, h, w), oracle::mhsa_macs(c, h, w));
}

TEST(FlopsMhsa, WithinFivePercentOfReference) {
  const auto sizes = spatial_sweep_sizes();
  const auto& ref = reference_spatial_mhsa_gflops();
  ASSERT_EQ(sizes.size(), ref.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double g = static_cast<double>(flops_mhsa(sizes[i].channels, sizes[i].height, sizes[i].width)) / 1e9;
    EXPECT_LE(std::abs(g - ref[i]) / ref[i], 0.05) << sizes[i].height;
  }
}

TEST(FlopsGmhsa, PerUnitHandValue) { EXPECT_EQ(flops_gmhsa_per_unit(16, 8, 8, 4), 36'864u); }

TEST(FlopsGmhsa, ReducesToMhsaOnSizeGrid) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const std::uint64_t C = 1 + rng() % 64, H = 1 + rng() % 48, W = 1 + rng() % 48;
    EXPECT_EQ(flops_gmhsa_units(C, H, W, H, W, 1), flops_mhsa(C, H, W));
  }
}

TEST(FlopsGmhsa, OrderAgainstReferenceAt144) {
  const double total = static_cast<double>(flops_gmhsa_total(16, 144, 144, 8, 8, 4)) / 1e9;
  EXPECT_LT(total, reference_spatial_gmhsa_gflops().back());
  EXPECT_LT(reference_spatial_gmhsa_gflops().back(), static_cast<double>(flops_mhsa(16, 144, 144)) / 1e9);
}

TEST(FlopsGmhsa, CheaperThanMhsaProperty) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 50; ++t) {
    const std::uint64_t phi = 2 + rng() % 3, h = 1 + rng() % 6, w = 1 + rng() % 6;
    const std::uint64_t C = phi * (1 + rng() % 16), H = h * (2 + rng() % 4), W = w * (1 + rng() % 4);
    EXPECT_LT(flops_gmhsa_total(C, H, W, h, w, phi), flops_mhsa(C, H, W));
  }
}

TEST(FlopsGmhsa, Validation) {
  EXPECT_THROW(flops_gmhsa_per_unit(10, 8, 8, 4), ConfigError);
  EXPECT_THROW(flops_gmhsa_units(16, 10, 8, 4, 4, 4), ConfigError);
  EXPECT_THROW(flops_mhsa(0, 4, 4), ConfigError);
}

TEST(Instrumented, WholeMapAttentionEqualsFlopsMhsa) {
  std::mt19937_64 rng(23);
  for (const auto [C, H, W, heads] : std::vector<std::array<std::size_t, 4>>{{8, 4, 4, 2}, {6, 3, 5, 3}, {16, 8, 8, 4}}) {
    const AttentionConfig cfg{C, H, W, H, W, heads, 1};
    const auto p = GmhsaParams::init(cfg, rng);
    const auto x = Tensor::uniform({C, H, W}, rng, -1, 1);
    EXPECT_EQ(count_ops_instrumented([&] { unit_attention(x, p, heads); }), flops_mhsa(C, H, W));
  }
}

TEST(Instrumented, PerUnitEqualsAnalyticOnRandomGrid) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 20; ++t) {
    const std::size_t heads = 1 + rng() % 3, phi = 1 + rng() % 4;
    const std::size_t C = phi * heads * (1 + rng() % 3), h = 1 + rng() % 5, w = 1 + rng() % 5;
    const AttentionConfig cfg{C, h, w, h, w, heads, phi};
    const auto p = GmhsaParams::init(cfg, rng);
    const auto tile = Tensor::uniform({C / phi, h, w}, rng, -1, 1);
    EXPECT_EQ(count_ops_instrumented([&] { unit_attention(tile, p, heads); }), flops_gmhsa_per_unit(C, h, w, phi))
        << C << " " << h << "x" << w << " phi " << phi;
  }
}

TEST(Instrumented, WholeBlockEqualsTotal) {
  std::mt19937_64 rng(25);
  const AttentionConfig cfg{16, 8, 12, 4, 3, 2, 4};
  const auto p = GmhsaParams::init(cfg, rng);
  const auto x = Tensor::uniform({16, 8, 12}, rng, -1, 1);
  EXPECT_EQ(count_ops_instrumented([&] { gmhsa_forward(x, cfg, p); }), flops_gmhsa_total(16, 8, 12, 4, 3, 4));
}

TEST(Sweep, ChannelRatiosRiseTowardFour) {
  const auto rows = sweep(channel_sweep_sizes(), {AttentionVariant::GMHSA});
  double prev_ratio = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double ratio = static_cast<double>(rows[i].flops) / static_cast<double>(rows[i - 1].flops);
    EXPECT_GT(ratio, prev_ratio);
    EXPECT_LT(ratio, 4.0);
    prev_ratio = ratio;
  }
  EXPECT_GE(prev_ratio, 3.5);
  // The reference values rise too.
  const auto& ref = reference_channel_gmhsa_gflops();
  for (std::size_t i = 2; i < ref.size(); ++i) EXPECT_GT(ref[i] / ref[i - 1], ref[i - 1] / ref[i - 2]);
}

TEST(Sweep, RowsPositiveAndOrdered) {
  const auto rows = sweep(spatial_sweep_sizes(), {AttentionVariant::MHSA, AttentionVariant::GMHSA});
  ASSERT_EQ(rows.size(), 16u);
  for (std::size_t i = 0; i < rows.size(); i += 2) {
    EXPECT_EQ(rows[i].variant, AttentionVariant::MHSA);
    EXPECT_EQ(rows[i + 1].variant, AttentionVariant::GMHSA);
    EXPECT_GT(rows[i].flops, 0u);
    EXPECT_GT(rows[i].memory_bytes, 0u);
    EXPECT_LT(rows[i + 1].flops, rows[i].flops);
    EXPECT_LT(rows[i + 1].memory_bytes, rows[i].memory_bytes);
  }
}

TEST(Sweep, EmptyAndZeroSizeRejected) {
  EXPECT_THROW(sweep({}, {AttentionVariant::MHSA}), UsageError);
  EXPECT_THROW(sweep({{16, 0, 40}}, {AttentionVariant::MHSA}), ConfigError);
}

TEST(Sweep, CsvLayout) {
  const auto csv = format_cost_csv(sweep({{16, 40, 40}}, {AttentionVariant::MHSA, AttentionVariant::GMHSA}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,C,H,W,h,w,phi,flops,memory_bytes");
  EXPECT_NE(csv.find("MHSA,16,40,40,40,40,1,83558400,"), std::string::npos);
  EXPECT_NE(csv.find("GMHSA,16,40,40,8,8,4,1126400,"), std::string::npos);
}
