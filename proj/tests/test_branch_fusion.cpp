#include <agmb/branch_fusion.hpp>
#include <agmb/gradcheck_suites.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace agmb;

namespace {

FusionParams zero_params(const FusionConfig& cfg) {
  const std::size_t c = cfg.total_channels, o = cfg.output_channels();
  return FusionParams{Tensor({cfg.hidden, c}), Tensor({cfg.hidden}), Tensor({cfg.blocks, cfg.hidden}),
                      Tensor({cfg.blocks}),    Tensor({o, o}),       Tensor({o})};
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

// Reference selection: full sort by score, ties to the lower index.
std::vector<std::size_t> sort_oracle(const std::vector<double>& s) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t i = 0; i < s.size(); ++i) v.push_back({-s[i], i});
  std::sort(v.begin(), v.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size() / 2; ++i) out.push_back(v[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(TopHalf, HandExample) {
  EXPECT_EQ(top_half({0.9, 0.1, 0.8, 0.2}), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(top_half({0.5, 0.5, 0.5, 0.5}), (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(top_half({0.1, 0.2, 0.3}), ConfigError);
  EXPECT_THROW(top_half({}), ConfigError);
}

TEST(TopHalf, MatchesSortOracle) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(2 * (1 + rng() % 32));
    for (auto& x : s) x = u(rng);
    EXPECT_EQ(top_half(s), sort_oracle(s));
  }
}

TEST(TopHalf, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0, 2);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(64), m(64);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = n(rng);
      m[i] = 3.0 * std::tanh(s[i] / 4.0) + 1.0;  // strictly increasing
    }
    EXPECT_EQ(top_half(s), top_half(m));
  }
}

TEST(BlockScores, ZeroWeightsGiveHalfAndKeepLeadingBlocks) {
  const auto cfg = FusionConfig::scaled(64, 8);
  const auto bs = block_scores(Tensor({64}, 0.3), zero_params(cfg), cfg);
  for (double s : bs.scores) EXPECT_EQ(s, 0.5);
  EXPECT_EQ(bs.kept, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(BlockScores, FullWidthKeepsHalf) {
  std::mt19937_64 rng(43);
  const FusionConfig cfg;  // 4096 channels, 64 blocks
  const auto p = FusionParams::init(cfg, rng);
  const auto bs = block_scores(Tensor::uniform({4096}, rng, 0, 1), p, cfg);
  EXPECT_EQ(bs.scores.size(), 64u);
  EXPECT_EQ(bs.kept.size(), 32u);
  EXPECT_EQ(kept_channels(bs.kept, cfg.block_channels()).size(), 2048u);
  EXPECT_EQ(cfg.output_channels(), 2048u);
  for (double s : bs.scores) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(BlockScores, WidthMismatchRejected) {
  const auto cfg = FusionConfig::scaled(64, 8);
  EXPECT_THROW(block_scores(Tensor({32}), zero_params(cfg), cfg), ConfigError);
}

TEST(FusionConfig, Validation) {
  EXPECT_THROW((FusionConfig{64, 7, 8}.validate()), ConfigError);
  EXPECT_THROW((FusionConfig{60, 8, 8}.validate()), ConfigError);
  EXPECT_THROW((FusionConfig{64, 8, 0}.validate()), ConfigError);
  EXPECT_NO_THROW(FusionConfig{}.validate());
}

TEST(Fuse, IdentityConvPassesKeptBlocksThrough) {
  std::mt19937_64 rng(44);
  const auto cfg = FusionConfig::scaled(16, 4);
  auto p = zero_params(cfg);
  p.fuse_w = identity(8);
  const auto local = Tensor::uniform({8, 3, 3}, rng, -1, 1);
  const auto global = Tensor::uniform({8, 3, 3}, rng, -1, 1);
  ad::FuseOptions opt;
  opt.forced_kept = std::vector<std::size_t>{0, 1};
  EXPECT_EQ(fuse(local, global, cfg, p, opt), local);
  opt.forced_kept = std::vector<std::size_t>{2, 3};
  EXPECT_EQ(fuse(local, global, cfg, p, opt), global);
}

TEST(Fuse, DiscardedBlocksHaveNoInfluence) {
  std::mt19937_64 rng(45);
  const auto cfg = FusionConfig::scaled(16, 4);
  const auto p = FusionParams::init(cfg, rng, 0.5);
  auto local = Tensor::uniform({8, 4, 4}, rng, -1, 1);
  auto global = Tensor::uniform({8, 4, 4}, rng, -1, 1);
  ad::FuseOptions opt;
  opt.frozen_descriptor = Tensor::uniform({16}, rng, 0, 1);
  BranchScores bs;
  opt.scores_out = &bs;
  const Tensor before = fuse(local, global, cfg, p, opt);
  ASSERT_EQ(bs.kept.size(), 2u);
  for (std::size_t b = 0; b < 4; ++b) {
    if (std::find(bs.kept.begin(), bs.kept.end(), b) != bs.kept.end()) continue;
    Tensor& target = b < 2 ? local : global;
    for (std::size_t c = (b % 2) * 4; c < (b % 2) * 4 + 4; ++c)
      for (std::size_t i = 0; i < 16; ++i) target[c * 16 + i] += 100.0;
  }
  EXPECT_EQ(fuse(local, global, cfg, p, opt), before);
}

TEST(Fuse, ScoreWeightsGetNoGradient) {
  std::mt19937_64 rng(46);
  const auto cfg = FusionConfig::scaled(16, 4);
  const auto p = FusionParams::init(cfg, rng, 0.5);
  Graph g;
  const auto v = agmb::bind(g, p);
  Var y = ad::fuse(g.constant(Tensor::uniform({8, 2, 2}, rng, -1, 1)), g.constant(Tensor::uniform({8, 2, 2}, rng, -1, 1)),
                   cfg, v);
  const auto grads = g.backward(ad::sum(y));
  EXPECT_EQ(grads.at("fusion.w1"), Tensor(p.w1.shape()));
  EXPECT_EQ(grads.at("fusion.b2"), Tensor(p.b2.shape()));
  EXPECT_NE(grads.at("fusion.fuse_w"), Tensor(p.fuse_w.shape()));
}

TEST(Fuse, ChannelAndSpatialMismatchRejected) {
  const auto cfg = FusionConfig::scaled(16, 4);
  const auto p = zero_params(cfg);
  EXPECT_THROW(fuse(Tensor({8, 2, 2}), Tensor({8, 4, 4}), cfg, p), DimensionError);
  EXPECT_THROW(fuse(Tensor({8, 2, 2}), Tensor({4, 2, 2}), cfg, p), ConfigError);
  ad::FuseOptions opt;
  opt.forced_kept = std::vector<std::size_t>{0};
  EXPECT_THROW(fuse(Tensor({8, 2, 2}), Tensor({8, 2, 2}), cfg, p, opt), ConfigError);
}

TEST(AlignSpatial, PoolsTheLargerBranch) {
  std::mt19937_64 rng(47);
  const auto big = Tensor::uniform({2, 8, 8}, rng, -1, 1);
  const auto small = Tensor::uniform({3, 4, 4}, rng, -1, 1);
  auto [a, b] = align_spatial(big, small);
  EXPECT_EQ(a, ops::avg_pool2d(big, 2, 2));
  EXPECT_EQ(b, small);
  auto [c, d] = align_spatial(small, Tensor::uniform({2, 16, 16}, rng, -1, 1));
  EXPECT_EQ(c, small);
  EXPECT_EQ(d.shape(), (Shape{2, 4, 4}));
  EXPECT_THROW(align_spatial(Tensor({2, 6, 6}), small), DimensionError);
  EXPECT_THROW(align_spatial(Tensor({2, 12, 12}), small), DimensionError);
}

TEST(FusionGradient, FiniteDifferenceSuitePasses) {
  const auto r = gradcheck_suites::run("fusion");
  EXPECT_TRUE(r.passed) << r.worst_name << " " << r.worst;
}
