#pragma once

// Toy-scale two-branch classifier.
//
//   stem (plain strided convs, stand-in for the C1-C4 backbone stages)
//     |-> local branch:  1x1 conv -> ReLU -> grouped 2x2/2 conv -> ReLU
//     |-> global branch: 1x1 conv -> ReLU -> progressive GMHSA stages
//   align -> branch fusion -> ReLU -> global average pool -> linear head
//
// Ablation variants drop one branch or replace the fusion module by a plain
// concatenation + 1x1 convolution.

#include <agmb/branch_fusion.hpp>
#include <agmb/progressive.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace agmb {

struct StemLayer {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
  friend bool operator==(const StemLayer&, const StemLayer&) = default;
};

enum class ModelVariant { Full, LocalOnly, GlobalOnly, NoFusion };

inline const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::Full: return "full";
    case ModelVariant::LocalOnly: return "local-only";
    case ModelVariant::GlobalOnly: return "global-only";
    case ModelVariant::NoFusion: return "no-fusion";
  }
  return "?";
}

struct ModelConfig {
  std::size_t input_channels = 4;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::vector<StemLayer> stem{{16, 2, 2}, {32, 2, 2}};
  std::size_t branch_width = 64;  // C_b; the fused width is 2 * C_b
  std::size_t theta = 16;
  std::size_t local_groups = 8;
  std::size_t phi = 4;
  std::size_t heads = 4;
  std::size_t classes = 3;
  // Empty means default_schedule() of the stem output.
  std::vector<ProgressiveStage> schedule;

  /// Smallest configuration used for end-to-end gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.input_height = 16;
    c.input_width = 16;
    c.stem = {{8, 2, 2}};
    c.branch_width = 16;
    c.theta = 8;
    c.local_groups = 4;
    return c;
  }

  Shape input_shape() const { return {input_channels, input_height, input_width}; }

  Shape stem_output_shape() const {
    std::size_t c = input_channels, h = input_height, w = input_width;
    for (std::size_t i = 0; i < stem.size(); ++i) {
      const auto& l = stem[i];
      if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
        throw ConfigError("stem layer " + std::to_string(i) + ": extents must be >= 1");
      }
      if (h < l.kernel || w < l.kernel) {
        throw ConfigError("stem layer " + std::to_string(i) + ": kernel " + std::to_string(l.kernel) +
                          " larger than its " + std::to_string(h) + "x" + std::to_string(w) + " input");
      }
      c = l.out_channels;
      h = (h - l.kernel) / l.stride + 1;
      w = (w - l.kernel) / l.stride + 1;
    }
    return {c, h, w};
  }

  ProgressiveConfig progressive() const {
    const Shape s = stem_output_shape();
    ProgressiveConfig p{branch_width, s[1], s[2], phi, heads, schedule};
    if (p.stages.empty()) p.stages = default_schedule(s[1], s[2]);
    return p;
  }

  FusionConfig fusion() const { return FusionConfig::scaled(2 * branch_width, theta); }

  /// Spatial dims after the local branch's stride-2 grouped convolution.
  Shape local_output_shape() const {
    const Shape s = stem_output_shape();
    if (s[1] < 2 || s[2] < 2) throw ConfigError("local branch needs at least a 2x2 stem output");
    return {branch_width, (s[1] - 2) / 2 + 1, (s[2] - 2) / 2 + 1};
  }

  void validate() const {
    if (input_channels == 0 || input_height == 0 || input_width == 0) throw ConfigError("input dims must be >= 1");
    if (classes != 3) throw ConfigError("head must have 3 classes, got " + std::to_string(classes));
    if (branch_width == 0) throw ConfigError("branch width must be >= 1");
    if (local_groups == 0 || branch_width % local_groups != 0) {
      throw ConfigError("branch width " + std::to_string(branch_width) + " not divisible by local groups " +
                        std::to_string(local_groups));
    }
    stem_output_shape();
    local_output_shape();
    progressive().validate();
    fusion().validate();
    // The two branch outputs must be alignable by power-of-two pooling.
    const Shape a = local_output_shape(), b = progressive().output_shape();
    const std::size_t big = std::max(a[1], b[1]), small = std::min(a[1], b[1]);
    const std::size_t f = big / small;
    if (big % small != 0 || (f & (f - 1)) != 0 || std::max(a[2], b[2]) != f * std::min(a[2], b[2])) {
      throw ConfigError("branch outputs " + shape_str(a) + " and " + shape_str(b) + " cannot be aligned");
    }
  }
};

struct ConvParams {
  Tensor w, b;
};

struct ModelParams {
  std::vector<ConvParams> stem;                // w: out x in x k x k
  std::optional<ConvParams> local_reduce;      // C_b x C_s
  std::optional<ConvParams> local_group;       // C_b x C_b/g x 2 x 2
  std::optional<ConvParams> global_proj;       // C_b x C_s
  std::optional<ProgressiveParams> progressive;
  std::optional<FusionParams> fusion;
  std::optional<ConvParams> concat;            // C_b x 2C_b (no-fusion variant)
  ConvParams head;                             // classes x width

  static bool uses_local(ModelVariant v) { return v != ModelVariant::GlobalOnly; }
  static bool uses_global(ModelVariant v) { return v != ModelVariant::LocalOnly; }

  /// Kaiming-normal convolutions and head, N(0, 0.02) attention weights,
  /// zero biases, all drawn from one mt19937_64 stream in a fixed order.
  static ModelParams init(const ModelConfig& cfg, ModelVariant variant, std::uint64_t seed,
                          double attention_stddev = 0.02) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    auto he = [&rng](Shape s, std::size_t fan_in) {
      return Tensor::randn(std::move(s), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
    };
    ModelParams p;
    std::size_t c = cfg.input_channels;
    for (const auto& l : cfg.stem) {
      p.stem.push_back({he({l.out_channels, c, l.kernel, l.kernel}, c * l.kernel * l.kernel), Tensor(Shape{l.out_channels})});
      c = l.out_channels;
    }
    const std::size_t cb = cfg.branch_width, cs = c;
    if (uses_local(variant)) {
      const std::size_t per_group = cb / cfg.local_groups;
      p.local_reduce = ConvParams{he({cb, cs}, cs), Tensor(Shape{cb})};
      p.local_group = ConvParams{he({cb, per_group, 2, 2}, per_group * 4), Tensor(Shape{cb})};
    }
    if (uses_global(variant)) {
      p.global_proj = ConvParams{he({cb, cs}, cs), Tensor(Shape{cb})};
      p.progressive = ProgressiveParams::init(cfg.progressive(), rng, attention_stddev);
    }
    if (variant == ModelVariant::Full) {
      const FusionConfig fc = cfg.fusion();
      const std::size_t o = fc.output_channels();
      p.fusion = FusionParams{he({fc.hidden, fc.total_channels}, fc.total_channels), Tensor(Shape{fc.hidden}),
                              he({fc.blocks, fc.hidden}, fc.hidden), Tensor(Shape{fc.blocks}), he({o, o}, o),
                              Tensor(Shape{o})};
    }
    if (variant == ModelVariant::NoFusion) p.concat = ConvParams{he({cb, 2 * cb}, 2 * cb), Tensor(Shape{cb})};
    p.head = ConvParams{he({cfg.classes, cb}, cb), Tensor(Shape{cfg.classes})};
    return p;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.stem.size(); ++i) {
      f("stem" + std::to_string(i) + ".w", self.stem[i].w);
      f("stem" + std::to_string(i) + ".b", self.stem[i].b);
    }
    if (self.local_reduce) {
      f(std::string("local.reduce.w"), self.local_reduce->w);
      f(std::string("local.reduce.b"), self.local_reduce->b);
    }
    if (self.local_group) {
      f(std::string("local.group.w"), self.local_group->w);
      f(std::string("local.group.b"), self.local_group->b);
    }
    if (self.global_proj) {
      f(std::string("global.proj.w"), self.global_proj->w);
      f(std::string("global.proj.b"), self.global_proj->b);
    }
    if (self.progressive) self.progressive->for_each(f, "global.");
    if (self.fusion) self.fusion->for_each(f, "fusion.");
    if (self.concat) {
      f(std::string("concat.w"), self.concat->w);
      f(std::string("concat.b"), self.concat->b);
    }
    f(std::string("head.w"), self.head.w);
    f(std::string("head.b"), self.head.b);
  }
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each([&n](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

namespace detail {

inline std::size_t gmhsa_param_count(const AttentionConfig& a) {
  const std::size_t c = a.channels, r = a.reduced_channels(), d = a.head_dim();
  return r * c + r + 4 * r * r + (a.unit_h + a.unit_w) * d + c * r + c;
}

}  // namespace detail

/// Exact number of trainable scalars of `variant` under `cfg`.
inline std::size_t parameter_count(const ModelConfig& cfg, ModelVariant variant = ModelVariant::Full) {
  cfg.validate();
  std::size_t n = 0, c = cfg.input_channels;
  for (const auto& l : cfg.stem) {
    n += l.out_channels * c * l.kernel * l.kernel + l.out_channels;
    c = l.out_channels;
  }
  const std::size_t cb = cfg.branch_width;
  if (ModelParams::uses_local(variant)) n += (cb * c + cb) + (cb * (cb / cfg.local_groups) * 4 + cb);
  if (ModelParams::uses_global(variant)) {
    n += cb * c + cb;
    const auto pc = cfg.progressive();
    for (std::size_t i = 0; i < pc.stages.size(); ++i) n += detail::gmhsa_param_count(pc.stage_config(i));
  }
  if (variant == ModelVariant::Full) {
    const auto fc = cfg.fusion();
    n += fc.hidden * fc.total_channels + fc.hidden + fc.blocks * fc.hidden + fc.blocks +
         fc.output_channels() * fc.output_channels() + fc.output_channels();
  }
  if (variant == ModelVariant::NoFusion) n += cb * 2 * cb + cb;
  n += cfg.classes * cb + cfg.classes;
  return n;
}

/// Stage name and output shape, in execution order.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

namespace ad {

inline Var forward_classify(Graph& g, Var x, const ModelConfig& cfg, ModelVariant variant, const ModelParams& p,
                            ShapeTrace* trace = nullptr) {
  cfg.validate();
  if (g.value(x).shape() != cfg.input_shape()) {
    throw DimensionError("model input " + shape_str(g.value(x).shape()) + " does not match config " +
                         shape_str(cfg.input_shape()));
  }
  auto note = [&](const std::string& name, Var v) {
    if (trace) trace->emplace_back(name, g.value(v).shape());
  };
  auto param = [&g](const Tensor& t, const std::string& name) { return g.parameter(t, name); };
  note("input", x);

  for (std::size_t i = 0; i < cfg.stem.size(); ++i) {
    const std::string pre = "stem" + std::to_string(i);
    x = relu(add_channel_bias(grouped_conv2d(x, param(p.stem[i].w, pre + ".w"), 1, cfg.stem[i].stride),
                              param(p.stem[i].b, pre + ".b")));
    note(pre, x);
  }

  std::optional<Var> local, global;
  if (ModelParams::uses_local(variant)) {
    if (!p.local_reduce || !p.local_group) throw ConfigError("model parameters lack the local branch");
    Var y = relu(conv1x1(x, param(p.local_reduce->w, "local.reduce.w"), param(p.local_reduce->b, "local.reduce.b")));
    y = relu(add_channel_bias(grouped_conv2d(y, param(p.local_group->w, "local.group.w"), cfg.local_groups, 2),
                              param(p.local_group->b, "local.group.b")));
    note("local", y);
    local = y;
  }
  if (ModelParams::uses_global(variant)) {
    if (!p.global_proj || !p.progressive) throw ConfigError("model parameters lack the global branch");
    Var y = relu(conv1x1(x, param(p.global_proj->w, "global.proj.w"), param(p.global_proj->b, "global.proj.b")));
    y = progressive_forward(y, cfg.progressive(), agmb::bind(g, *p.progressive, "global."));
    note("global", y);
    global = y;
  }

  Var features = local ? *local : *global;
  if (local && global) {
    auto [a, b] = align_spatial(*local, *global);
    if (variant == ModelVariant::Full) {
      if (!p.fusion) throw ConfigError("model parameters lack the fusion module");
      features = relu(fuse(a, b, cfg.fusion(), agmb::bind(g, *p.fusion, "fusion.")));
      note("fusion", features);
    } else {
      if (!p.concat) throw ConfigError("model parameters lack the concat projection");
      features = relu(conv1x1(concat_channels({a, b}), param(p.concat->w, "concat.w"), param(p.concat->b, "concat.b")));
      note("concat", features);
    }
  }

  Var pooled = reshape(global_avg_pool(features), Shape{cfg.branch_width, 1});
  note("pool", pooled);
  Var scores = add(matmul(param(p.head.w, "head.w"), pooled), reshape(param(p.head.b, "head.b"), Shape{cfg.classes, 1}));
  scores = reshape(scores, Shape{cfg.classes});
  note("head", scores);
  return scores;
}

}  // namespace ad

inline Tensor forward_classify(const Tensor& x, const ModelConfig& cfg, ModelVariant variant, const ModelParams& p,
                               ShapeTrace* trace = nullptr) {
  Graph g;
  return g.value(ad::forward_classify(g, g.constant(x), cfg, variant, p, trace));
}

/// FNV-1a over the IEEE-754 bit patterns (little-endian byte order).
inline std::uint64_t score_checksum(const Tensor& scores) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : scores.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace agmb
