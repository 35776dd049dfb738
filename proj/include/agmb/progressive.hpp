#pragma once

// Global feature branch: GMHSA blocks with residual skips, stride-2 average
// pooling where a stage asks for it, and attention units that grow until the
// last stage attends over the whole (pooled) map.

#include <agmb/gmhsa.hpp>

#include <string>
#include <vector>

namespace agmb {

struct ProgressiveStage {
  std::size_t unit_h;
  std::size_t unit_w;
  bool pool_after;

  friend bool operator==(const ProgressiveStage&, const ProgressiveStage&) = default;
};

/// Quarter-size units, one pool, then global units over the pooled map.
/// H and W must be powers of two no smaller than 8.
inline std::vector<ProgressiveStage> default_schedule(std::size_t H, std::size_t W) {
  auto ok = [](std::size_t n) { return n >= 8 && (n & (n - 1)) == 0; };
  if (!ok(H) || !ok(W)) {
    throw ConfigError("default_schedule: " + std::to_string(H) + "x" + std::to_string(W) +
                      " must be powers of two >= 8");
  }
  return {{H / 4, W / 4, true}, {H / 2, W / 2, false}};
}

struct ProgressiveConfig {
  std::size_t channels = 16;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t bottleneck = 4;
  std::size_t heads = 4;
  std::vector<ProgressiveStage> stages;

  static ProgressiveConfig with_default_schedule(std::size_t C, std::size_t H, std::size_t W, std::size_t phi = 4,
                                                 std::size_t heads = 4) {
    return ProgressiveConfig{C, H, W, phi, heads, default_schedule(H, W)};
  }

  /// Attention config of stage i, with the spatial dims that stage sees.
  AttentionConfig stage_config(std::size_t i) const {
    std::size_t h = height, w = width;
    for (std::size_t s = 0; s < i; ++s) {
      if (stages[s].pool_after) {
        h /= 2;
        w /= 2;
      }
    }
    return AttentionConfig{channels, h, w, stages.at(i).unit_h, stages.at(i).unit_w, heads, bottleneck};
  }

  std::size_t pool_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.pool_after ? 1 : 0;
    return n;
  }

  void validate() const {
    if (stages.empty()) throw ConfigError("progressive: schedule has no stages");
    std::size_t h = height, w = width;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      const std::string where = "progressive stage " + std::to_string(i) + ": ";
      if (i > 0 && (s.unit_h < stages[i - 1].unit_h || s.unit_w < stages[i - 1].unit_w)) {
        throw ConfigError(where + "unit sizes must be non-decreasing");
      }
      stage_config(i).validate();
      if (s.pool_after) {
        if (h % 2 != 0 || w % 2 != 0) throw ConfigError(where + "cannot pool odd dims " + std::to_string(h) + "x" + std::to_string(w));
        h /= 2;
        w /= 2;
      }
    }
    const auto last = stage_config(stages.size() - 1);
    if (last.unit_h != last.height || last.unit_w != last.width) {
      throw ConfigError("progressive: final stage unit " + std::to_string(last.unit_h) + "x" +
                        std::to_string(last.unit_w) + " must cover its whole " + std::to_string(last.height) + "x" +
                        std::to_string(last.width) + " map");
    }
  }

  Shape output_shape() const {
    const std::size_t f = std::size_t{1} << pool_count();
    return {channels, height / f, width / f};
  }
};

struct ProgressiveParams {
  std::vector<GmhsaParams> stages;

  template <class Rng>
  static ProgressiveParams init(const ProgressiveConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    ProgressiveParams p;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) p.stages.push_back(GmhsaParams::init(cfg.stage_config(i), rng, stddev));
    return p;
  }

  static ProgressiveParams zeros(const ProgressiveConfig& cfg) {
    cfg.validate();
    ProgressiveParams p;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) p.stages.push_back(GmhsaParams::zeros(cfg.stage_config(i)));
    return p;
  }

  static std::string stage_prefix(const std::string& prefix, std::size_t i) {
    return prefix + "stage" + std::to_string(i) + ".";
  }

  template <class F>
  void for_each(F&& f, const std::string& prefix = "progressive.") {
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].for_each(f, stage_prefix(prefix, i));
  }
  template <class F>
  void for_each(F&& f, const std::string& prefix = "progressive.") const {
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].for_each(f, stage_prefix(prefix, i));
  }
};

inline std::vector<GmhsaVars> bind(Graph& g, const ProgressiveParams& p, const std::string& prefix = "progressive.") {
  std::vector<GmhsaVars> v;
  for (std::size_t i = 0; i < p.stages.size(); ++i) v.push_back(agmb::bind(g, p.stages[i], ProgressiveParams::stage_prefix(prefix, i)));
  return v;
}

namespace ad {

/// Runs every stage as x <- x + gmhsa(x), pooling after flagged stages.
/// `stage_inputs`, when given, receives the input of each stage.
inline Var progressive_forward(Var x, const ProgressiveConfig& cfg, const std::vector<GmhsaVars>& p,
                               std::vector<Var>* stage_inputs = nullptr) {
  cfg.validate();
  if (p.size() != cfg.stages.size()) {
    throw ConfigError("progressive: " + std::to_string(p.size()) + " parameter sets for " +
                      std::to_string(cfg.stages.size()) + " stages");
  }
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    if (stage_inputs) stage_inputs->push_back(x);
    x = add(x, gmhsa_forward(x, cfg.stage_config(i), p[i]));
    if (cfg.stages[i].pool_after) x = avg_pool2d(x, 2, 2);
  }
  return x;
}

}  // namespace ad

inline Tensor progressive_forward(const Tensor& x, const ProgressiveConfig& cfg, const ProgressiveParams& p) {
  Graph g;
  const auto v = agmb::bind(g, p);
  return g.value(ad::progressive_forward(g.constant(x), cfg, v));
}

}  // namespace agmb
