#pragma once

// Branch fusion: concatenate the local and global branch features, score θ
// equal channel blocks from the pooled channel descriptor
// (S = sigmoid(W2 relu(W1 U))), keep the better-scoring half and fuse the
// kept channels with a 1x1 convolution.
//
// Selection is hard, so the score weights receive no gradient through the
// fused output.

#include <agmb/autodiff.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace agmb {

struct FusionConfig {
  std::size_t total_channels = 4096;
  std::size_t blocks = 64;   // theta
  std::size_t hidden = 512;  // width of the first scoring convolution

  /// Keeps the 4096 -> 512 -> 64 ratio of the full-size network.
  static FusionConfig scaled(std::size_t total_channels, std::size_t blocks) {
    return FusionConfig{total_channels, blocks, std::max<std::size_t>(1, total_channels / 8)};
  }

  void validate() const {
    const std::string where = "fusion config C_total=" + std::to_string(total_channels) +
                              " theta=" + std::to_string(blocks) + ": ";
    if (blocks < 2 || blocks % 2 != 0) throw ConfigError(where + "theta must be even and >= 2");
    if (total_channels % blocks != 0) throw ConfigError(where + "C_total not divisible by theta");
    if (total_channels % 2 != 0) throw ConfigError(where + "C_total must be even");
    if (hidden == 0) throw ConfigError(where + "hidden width must be >= 1");
  }

  std::size_t block_channels() const { return total_channels / blocks; }
  std::size_t kept_blocks() const { return blocks / 2; }
  std::size_t output_channels() const { return total_channels / 2; }
};

struct BranchScores {
  std::vector<double> scores;       // one per block, in (0, 1)
  std::vector<std::size_t> kept;    // ascending block indices, |kept| = theta/2
};

/// Indices of the top half of `scores`; equal scores keep the lower index.
/// The result is sorted ascending.
inline std::vector<std::size_t> top_half(const std::vector<double>& scores) {
  if (scores.empty() || scores.size() % 2 != 0) throw ConfigError("top_half: need an even, non-zero number of scores");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(scores.size() / 2);
  std::sort(order.begin(), order.end());
  return order;
}

struct FusionParams {
  Tensor w1, b1;          // hidden x C_total, hidden
  Tensor w2, b2;          // theta x hidden, theta
  Tensor fuse_w, fuse_b;  // C_total/2 x C_total/2, C_total/2

  template <class Rng>
  static FusionParams init(const FusionConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    const std::size_t c = cfg.total_channels, o = cfg.output_channels();
    return FusionParams{Tensor::randn({cfg.hidden, c}, rng, stddev), Tensor(Shape{cfg.hidden}),
                        Tensor::randn({cfg.blocks, cfg.hidden}, rng, stddev), Tensor(Shape{cfg.blocks}),
                        Tensor::randn({o, o}, rng, stddev), Tensor(Shape{o})};
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f, const std::string& prefix) {
    f(prefix + "w1", self.w1);
    f(prefix + "b1", self.b1);
    f(prefix + "w2", self.w2);
    f(prefix + "b2", self.b2);
    f(prefix + "fuse_w", self.fuse_w);
    f(prefix + "fuse_b", self.fuse_b);
  }
  template <class F>
  void for_each(F&& f, const std::string& prefix = "fusion.") {
    visit(*this, f, prefix);
  }
  template <class F>
  void for_each(F&& f, const std::string& prefix = "fusion.") const {
    visit(*this, f, prefix);
  }
};

struct FusionVars {
  Var w1, b1, w2, b2, fuse_w, fuse_b;
};

inline FusionVars bind(Graph& g, const FusionParams& p, const std::string& prefix = "fusion.") {
  FusionVars v;
  Var* slots[] = {&v.w1, &v.b1, &v.w2, &v.b2, &v.fuse_w, &v.fuse_b};
  std::size_t i = 0;
  p.for_each([&](const std::string& name, const Tensor& t) { *slots[i++] = g.parameter(t, name); }, prefix);
  return v;
}

namespace detail {
inline void check_widths(const FusionConfig& cfg, const Shape& w1, const Shape& w2, std::size_t descriptor) {
  if (descriptor != cfg.total_channels || w1 != Shape{cfg.hidden, cfg.total_channels} ||
      w2 != Shape{cfg.blocks, cfg.hidden}) {
    throw ConfigError("fusion: descriptor of " + std::to_string(descriptor) + " channels with W1 " + shape_str(w1) +
                      " and W2 " + shape_str(w2) + " does not match C_total=" + std::to_string(cfg.total_channels) +
                      ", hidden=" + std::to_string(cfg.hidden) + ", theta=" + std::to_string(cfg.blocks));
  }
}
}  // namespace detail

/// Block scores for a pooled channel descriptor u (length C_total).
inline BranchScores block_scores(const Tensor& u, const FusionParams& p, const FusionConfig& cfg) {
  cfg.validate();
  detail::check_widths(cfg, p.w1.shape(), p.w2.shape(), u.size());
  const Tensor col = u.reshaped({u.size(), 1});
  Tensor hidden = ops::matmul(p.w1, col);
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] += p.b1[i];
  hidden = ops::relu(hidden);
  Tensor logits = ops::matmul(p.w2, hidden);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += p.b2[i];
  const Tensor s = ops::sigmoid(logits);
  BranchScores out{s.values(), {}};
  out.kept = top_half(out.scores);
  return out;
}

/// Channel indices of the kept blocks, in ascending block order.
inline std::vector<std::size_t> kept_channels(const std::vector<std::size_t>& kept, std::size_t block_channels) {
  std::vector<std::size_t> ch;
  ch.reserve(kept.size() * block_channels);
  for (auto b : kept)
    for (std::size_t i = 0; i < block_channels; ++i) ch.push_back(b * block_channels + i);
  return ch;
}

namespace ad {

/// Brings two branch outputs to the same spatial size by average pooling the
/// larger one with window = stride = the (power-of-two) size ratio.
inline std::pair<Var, Var> align_spatial(Var local, Var global) {
  const Shape a = local.graph->value(local).shape();
  const Shape b = global.graph->value(global).shape();
  if (a.size() != 3 || b.size() != 3) throw DimensionError("align: branches must be C x H x W");
  if (a[1] == b[1] && a[2] == b[2]) return {local, global};
  const bool local_larger = a[1] >= b[1];
  const Shape& big = local_larger ? a : b;
  const Shape& small = local_larger ? b : a;
  const std::size_t f = big[1] / small[1];
  const bool pow2 = f >= 2 && (f & (f - 1)) == 0;
  if (!pow2 || big[1] != f * small[1] || big[2] != f * small[2]) {
    throw DimensionError("align: spatial dims " + shape_str(a) + " and " + shape_str(b) +
                         " are not related by a power-of-two factor");
  }
  if (local_larger) return {avg_pool2d(local, f, f), global};
  return {local, avg_pool2d(global, f, f)};
}

struct FuseOptions {
  // Replaces the pooled descriptor used for scoring.
  std::optional<Tensor> frozen_descriptor;
  // Bypasses scoring and keeps exactly these blocks (ascending).
  std::optional<std::vector<std::size_t>> forced_kept;
  BranchScores* scores_out = nullptr;
};

inline Var fuse(Var local, Var global, const FusionConfig& cfg, const FusionVars& p, const FuseOptions& opt = {}) {
  cfg.validate();
  Graph& g = *local.graph;
  const Shape a = g.value(local).shape(), b = g.value(global).shape();
  if (a.size() != 3 || b.size() != 3 || a[1] != b[1] || a[2] != b[2]) {
    throw DimensionError("fuse: branch spatial dims differ, " + shape_str(a) + " vs " + shape_str(b));
  }
  if (a[0] + b[0] != cfg.total_channels) {
    throw ConfigError("fuse: branches carry " + std::to_string(a[0] + b[0]) + " channels, config expects " +
                      std::to_string(cfg.total_channels));
  }
  Var joined = concat_channels({local, global});

  Var u = opt.frozen_descriptor ? g.constant(*opt.frozen_descriptor) : global_avg_pool(joined);
  ::agmb::detail::check_widths(cfg, g.value(p.w1).shape(), g.value(p.w2).shape(), g.value(u).size());
  Var col = reshape(u, Shape{cfg.total_channels, 1});
  Var hidden = relu(add(matmul(p.w1, col), reshape(p.b1, Shape{cfg.hidden, 1})));
  Var scores = sigmoid(add(matmul(p.w2, hidden), reshape(p.b2, Shape{cfg.blocks, 1})));

  BranchScores bs{g.value(scores).values(), {}};
  bs.kept = opt.forced_kept ? *opt.forced_kept : top_half(bs.scores);
  if (bs.kept.size() != cfg.kept_blocks()) throw ConfigError("fuse: must keep exactly theta/2 blocks");
  if (opt.scores_out) *opt.scores_out = bs;

  Var kept = select_channels(joined, kept_channels(bs.kept, cfg.block_channels()));
  return conv1x1(kept, p.fuse_w, p.fuse_b);
}

}  // namespace ad

inline std::pair<Tensor, Tensor> align_spatial(const Tensor& local, const Tensor& global) {
  Graph g;
  auto [a, b] = ad::align_spatial(g.constant(local), g.constant(global));
  return {g.value(a), g.value(b)};
}

inline Tensor fuse(const Tensor& local, const Tensor& global, const FusionConfig& cfg, const FusionParams& p,
                   const ad::FuseOptions& opt = {}) {
  Graph g;
  const FusionVars v = agmb::bind(g, p);
  return g.value(ad::fuse(g.constant(local), g.constant(global), cfg, v, opt));
}

}  // namespace agmb
