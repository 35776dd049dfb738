#include <agmb/gradcheck_suites.hpp>
#include <agmb/progressive.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace agmb;

TEST(DefaultSchedule, SixteenAndEight) {
  EXPECT_EQ(default_schedule(16, 16), (std::vector<ProgressiveStage>{{4, 4, true}, {8, 8, false}}));
  EXPECT_EQ(default_schedule(8, 8), (std::vector<ProgressiveStage>{{2, 2, true}, {4, 4, false}}));
  EXPECT_EQ(default_schedule(32, 16), (std::vector<ProgressiveStage>{{8, 4, true}, {16, 8, false}}));
}

TEST(DefaultSchedule, RejectsSmallOrOddSizes) {
  EXPECT_THROW(default_schedule(4, 4), ConfigError);
  EXPECT_THROW(default_schedule(12, 16), ConfigError);
}

TEST(ProgressiveConfig, DefaultEndsGlobalAtHalfSize) {
  const auto cfg = ProgressiveConfig::with_default_schedule(8, 16, 16, 2, 2);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.output_shape(), (Shape{8, 8, 8}));
  const auto last = cfg.stage_config(1);
  EXPECT_EQ(last.unit_h, last.height);
  EXPECT_EQ(last.unit_w, last.width);
}

TEST(ProgressiveConfig, Validation) {
  ProgressiveConfig c{8, 16, 16, 2, 2, {{8, 8, true}, {4, 4, false}}};
  EXPECT_THROW(c.validate(), ConfigError);  // decreasing units
  c.stages = {{4, 4, false}};
  EXPECT_THROW(c.validate(), ConfigError);  // final stage not global
  c.stages = {{3, 3, true}, {8, 8, false}};
  EXPECT_THROW(c.validate(), ConfigError);  // 16 % 3
  c.stages = {};
  EXPECT_THROW(c.validate(), ConfigError);
  ProgressiveConfig fine{8, 12, 12, 2, 2, {{3, 3, true}, {3, 3, true}, {3, 3, false}}};
  EXPECT_NO_THROW(fine.validate());  // 12 -> 6 -> 3, last unit global
  ProgressiveConfig odd{8, 6, 6, 2, 2, {{3, 3, true}, {3, 3, true}, {3, 3, false}}};
  EXPECT_THROW(odd.validate(), ConfigError);  // pooling a 3x3 map
}

TEST(ProgressiveForward, OutputDimsFollowPoolCount) {
  std::mt19937_64 rng(31);
  const ProgressiveConfig cfg{8, 16, 16, 2, 2, {{2, 2, true}, {4, 4, true}, {4, 4, false}}};
  ASSERT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.pool_count(), 2u);
  const auto y = progressive_forward(Tensor::uniform({8, 16, 16}, rng, -1, 1), cfg, ProgressiveParams::init(cfg, rng));
  EXPECT_EQ(y.shape(), (Shape{8, 4, 4}));
}

TEST(ProgressiveForward, SingleGlobalStagePreservesDims) {
  std::mt19937_64 rng(32);
  const ProgressiveConfig cfg{8, 6, 4, 2, 2, {{6, 4, false}}};
  const auto x = Tensor::uniform({8, 6, 4}, rng, -1, 1);
  EXPECT_EQ(progressive_forward(x, cfg, ProgressiveParams::init(cfg, rng)).shape(), x.shape());
}

TEST(ProgressiveForward, ZeroAttentionIsPooledIdentity) {
  std::mt19937_64 rng(33);
  const auto cfg = ProgressiveConfig::with_default_schedule(8, 16, 16, 2, 2);
  const auto x = Tensor::uniform({8, 16, 16}, rng, -1, 1);
  EXPECT_EQ(progressive_forward(x, cfg, ProgressiveParams::zeros(cfg)), ops::avg_pool2d(x, 2, 2));
}

TEST(ProgressiveForward, FinalStageIsGlobal) {
  std::mt19937_64 rng(34);
  const auto cfg = ProgressiveConfig::with_default_schedule(8, 8, 8, 2, 2);
  const auto params = ProgressiveParams::init(cfg, rng, 0.5);
  const auto input = Tensor::uniform({8, 8, 8}, rng, -1, 1);
  const std::size_t side = 4, P = side * side;
  for (std::size_t out_pos = 0; out_pos < P; ++out_pos) {
    Graph g;
    const auto vars = agmb::bind(g, params);
    std::vector<Var> stage_inputs;
    Var x = g.parameter(input, "x");
    Var y = ad::progressive_forward(x, cfg, vars, &stage_inputs);
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < 8; ++c) idx.push_back(c * P + out_pos);
    g.backward(ad::sum(ad::gather(y, idx, Shape{8})));
    const Tensor gin = g.grad(stage_inputs.back());
    ASSERT_EQ(gin.shape(), (Shape{8, side, side}));
    for (std::size_t p = 0; p < P; ++p) {
      double mag = 0;
      for (std::size_t c = 0; c < 8; ++c) mag += std::abs(gin[c * P + p]);
      EXPECT_GT(mag, 0.0) << "output " << out_pos << " input " << p;
    }
  }
}

TEST(ProgressiveParams, StageNames) {
  const auto cfg = ProgressiveConfig::with_default_schedule(8, 8, 8, 2, 2);
  std::vector<std::string> names;
  ProgressiveParams::zeros(cfg).for_each([&](const std::string& n, const Tensor&) { names.push_back(n); });
  ASSERT_EQ(names.size(), 20u);
  EXPECT_EQ(names.front(), "progressive.stage0.reduce_w");
  EXPECT_EQ(names.back(), "progressive.stage1.expand_b");
}

TEST(ProgressiveGradient, FiniteDifferenceSuitePasses) {
  const auto r = gradcheck_suites::run("progressive");
  EXPECT_TRUE(r.passed) << r.worst_name << " " << r.worst;
}
