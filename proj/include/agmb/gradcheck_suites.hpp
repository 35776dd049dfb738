#pragma once

// Ready-made finite-difference suites, one per scope:
//   ops          every differentiable kernel on small random inputs
//   gmhsa        one GMHSA block, parameters and input
//   progressive  a two-stage progressive branch
//   fusion       branch fusion, both branch inputs and all weights
//   model        the tiny end-to-end classifier
// Each loss is sum(mask * output) with a fixed random mask.

#include <agmb/gradcheck.hpp>
#include <agmb/model.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace agmb::gradcheck_suites {

inline const std::vector<std::string>& scopes() {
  static const std::vector<std::string> s{"ops", "gmhsa", "progressive", "fusion", "model"};
  return s;
}

namespace detail {

// Uniform in [-mag, mag] but at least `gap` away from zero, so ReLU kinks are
// never inside the finite-difference stencil.
template <class Rng>
Tensor away_from_zero(Shape s, Rng& rng, double mag, double gap = 0.05) {
  Tensor t = Tensor::uniform(std::move(s), rng, -mag, mag);
  for (auto& v : t.data()) v = v < 0 ? std::min(v, -gap) : std::max(v, gap);
  return t;
}

inline Var masked_sum(Graph& g, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(v, g.constant(Tensor::uniform(g.value(v).shape(), rng, -1.0, 1.0))));
}

}  // namespace detail

struct OpsProbe {
  std::vector<NamedTensor> inputs;

  static OpsProbe make(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    OpsProbe p;
    auto put = [&p](const char* n, Tensor t) { p.inputs.push_back({n, std::move(t)}); };
    put("matmul.a", Tensor::uniform({3, 4}, rng, -3, 3));
    put("matmul.b", Tensor::uniform({4, 5}, rng, -3, 3));
    put("transpose.x", Tensor::uniform({2, 3}, rng, -3, 3));
    put("softmax.x", Tensor::uniform({3, 5}, rng, -10, 10));
    put("conv.x", Tensor::uniform({4, 5, 5}, rng, -3, 3));
    put("conv.w", Tensor::uniform({4, 2, 3, 3}, rng, -1, 1));
    put("pool.x", Tensor::uniform({2, 4, 4}, rng, -3, 3));
    put("relu.x", detail::away_from_zero({2, 3, 3}, rng, 10));
    put("sigmoid.x", Tensor::uniform({2, 3, 3}, rng, -10, 10));
    put("add.a", Tensor::uniform({2, 3}, rng, -3, 3));
    put("add.b", Tensor::uniform({2, 3}, rng, -3, 3));
    put("mul.a", Tensor::uniform({2, 3}, rng, -3, 3));
    put("mul.b", Tensor::uniform({2, 3}, rng, -3, 3));
    put("bias.x", Tensor::uniform({3, 2, 2}, rng, -3, 3));
    put("bias.b", Tensor::uniform({3}, rng, -3, 3));
    put("concat.a", Tensor::uniform({2, 2, 2}, rng, -3, 3));
    put("concat.b", Tensor::uniform({1, 2, 2}, rng, -3, 3));
    put("gap.x", Tensor::uniform({3, 2, 2}, rng, -3, 3));
    return p;
  }

  template <class F>
  void for_each(F&& f) {
    for (auto& t : inputs) f(t.name, t.value);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& t : inputs) f(t.name, t.value);
  }

  Var loss(Graph& g) const {
    std::vector<Var> v;
    for (const auto& t : inputs) v.push_back(g.parameter(t.value, t.name));
    std::vector<Var> terms{
        ad::matmul(v[0], v[1]),
        ad::transpose(v[2]),
        ad::softmax(v[3], 1),
        ad::grouped_conv2d(v[4], v[5], 2, 1),
        ad::avg_pool2d(v[6], 2, 2),
        ad::relu(v[7]),
        ad::sigmoid(v[8]),
        ad::add(v[9], v[10]),
        ad::mul(v[11], v[12]),
        ad::add_channel_bias(v[13], v[14]),
        ad::concat_channels({v[15], v[16]}),
        ad::global_avg_pool(v[17]),
    };
    Var total = detail::masked_sum(g, terms[0], 100);
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, detail::masked_sum(g, terms[i], 100 + i));
    return total;
  }
};

struct GmhsaProbe {
  AttentionConfig cfg{8, 4, 4, 2, 2, 2, 2};
  GmhsaParams params;
  Tensor input;

  static GmhsaProbe make(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GmhsaProbe p;
    p.params = GmhsaParams::init(p.cfg, rng, 0.5);
    p.input = Tensor::uniform({p.cfg.channels, p.cfg.height, p.cfg.width}, rng, -2, 2);
    return p;
  }
  template <class F>
  void for_each(F&& f) {
    params.for_each(f);
    f(std::string("input"), input);
  }
  Var loss(Graph& g) const {
    const auto v = agmb::bind(g, params);
    Var x = g.parameter(input, "input");
    return detail::masked_sum(g, ad::gmhsa_forward(x, cfg, v), 11);
  }
};

struct ProgressiveProbe {
  ProgressiveConfig cfg = ProgressiveConfig::with_default_schedule(8, 8, 8, 2, 2);
  ProgressiveParams params;
  Tensor input;

  static ProgressiveProbe make(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ProgressiveProbe p;
    p.params = ProgressiveParams::init(p.cfg, rng, 0.3);
    p.input = Tensor::uniform({p.cfg.channels, p.cfg.height, p.cfg.width}, rng, -2, 2);
    return p;
  }
  template <class F>
  void for_each(F&& f) {
    params.for_each(f);
    f(std::string("input"), input);
  }
  Var loss(Graph& g) const {
    const auto v = agmb::bind(g, params);
    Var x = g.parameter(input, "input");
    return detail::masked_sum(g, ad::progressive_forward(x, cfg, v), 12);
  }
};

struct FusionProbe {
  FusionConfig cfg = FusionConfig::scaled(16, 4);
  FusionParams params;
  Tensor local, global;

  static FusionProbe make(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    FusionProbe p;
    p.params = FusionParams::init(p.cfg, rng, 0.5);
    p.local = Tensor::uniform({8, 2, 2}, rng, -2, 2);
    p.global = Tensor::uniform({8, 2, 2}, rng, -2, 2);
    return p;
  }
  template <class F>
  void for_each(F&& f) {
    params.for_each(f);
    f(std::string("local"), local);
    f(std::string("global"), global);
  }
  Var loss(Graph& g) const {
    const auto v = agmb::bind(g, params);
    Var a = g.parameter(local, "local");
    Var b = g.parameter(global, "global");
    return detail::masked_sum(g, ad::fuse(a, b, cfg, v), 13);
  }
};

struct ModelProbe {
  ModelConfig cfg = ModelConfig::tiny();
  ModelVariant variant = ModelVariant::Full;
  ModelParams params;
  Tensor input;

  static ModelProbe make(std::uint64_t seed, ModelVariant variant = ModelVariant::Full) {
    ModelProbe p;
    p.variant = variant;
    p.params = ModelParams::init(p.cfg, variant, seed, 0.3);
    std::mt19937_64 rng(seed + 1);
    p.input = Tensor::uniform(p.cfg.input_shape(), rng, 0, 1);
    return p;
  }
  template <class F>
  void for_each(F&& f) {
    params.for_each(f);
    f(std::string("input"), input);
  }
  Var loss(Graph& g) const {
    Var x = g.parameter(input, "input");
    return detail::masked_sum(g, ad::forward_classify(g, x, cfg, variant, params), 14);
  }
};

template <class Probe>
GradCheckResult check_probe(Probe& probe, const GradCheckOptions& opt) {
  return check_gradients(probe, [](Graph& g, const Probe& p) { return p.loss(g); }, opt);
}

/// Runs the suite for `scope`; throws UsageError for unknown scopes.
inline GradCheckResult run(const std::string& scope, const GradCheckOptions& opt = {}, std::uint64_t seed = 42) {
  if (scope == "ops") {
    auto p = OpsProbe::make(seed);
    return check_probe(p, opt);
  }
  if (scope == "gmhsa") {
    auto p = GmhsaProbe::make(seed);
    return check_probe(p, opt);
  }
  if (scope == "progressive") {
    auto p = ProgressiveProbe::make(seed);
    return check_probe(p, opt);
  }
  if (scope == "fusion") {
    auto p = FusionProbe::make(seed);
    return check_probe(p, opt);
  }
  if (scope == "model") {
    auto p = ModelProbe::make(seed);
    return check_probe(p, opt);
  }
  throw UsageError("unknown gradcheck scope '" + scope + "' (expected ops, gmhsa, progressive, fusion or model)");
}

}  // namespace agmb::gradcheck_suites
