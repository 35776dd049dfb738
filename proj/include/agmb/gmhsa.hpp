#pragma once

// Group Multi-Head Self-Attention.
//
// A C x H x W map is reduced to C/phi channels by a 1x1 convolution, cut into
// N = (H/h)(W/w) tiles of h x w, each tile runs multi-head self-attention on
// its own, the tiles are stitched back together and a 1x1 convolution expands
// to C channels again. Attention logits carry a position term built from a
// row table R_h (h x d) and a column table R_w (w x d).

#include <agmb/autodiff.hpp>

#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace agmb {

struct AttentionConfig {
  std::size_t channels = 16;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t unit_h = 4;
  std::size_t unit_w = 4;
  std::size_t heads = 4;
  std::size_t bottleneck = 4;  // phi

  void validate() const {
    auto fail = [this](const std::string& why) {
      throw ConfigError("attention config C=" + std::to_string(channels) + " H=" + std::to_string(height) +
                        " W=" + std::to_string(width) + " unit=" + std::to_string(unit_h) + "x" +
                        std::to_string(unit_w) + " heads=" + std::to_string(heads) +
                        " phi=" + std::to_string(bottleneck) + ": " + why);
    };
    if (channels == 0 || height == 0 || width == 0 || unit_h == 0 || unit_w == 0) fail("extents must be >= 1");
    if (heads == 0) fail("heads must be >= 1");
    if (bottleneck == 0) fail("phi must be >= 1");
    if (height % unit_h != 0) fail("H not divisible by unit height");
    if (width % unit_w != 0) fail("W not divisible by unit width");
    if (channels % bottleneck != 0) fail("C not divisible by phi");
    if ((channels / bottleneck) % heads != 0) fail("C/phi not divisible by heads");
  }

  std::size_t reduced_channels() const { return channels / bottleneck; }
  std::size_t head_dim() const { return reduced_channels() / heads; }
  std::size_t tiles_y() const { return height / unit_h; }
  std::size_t tiles_x() const { return width / unit_w; }
  std::size_t tile_count() const { return tiles_y() * tiles_x(); }
};

// ---------------------------------------------------------------------------
// Grouping and merging

/// One h x w tile together with its position in the tile grid.
struct Tile {
  Tensor data;
  std::size_t row = 0;
  std::size_t col = 0;
};

namespace detail {

// Flat source indices of tile (ty, tx) inside a C x H x W map.
inline std::vector<std::size_t> tile_indices(std::size_t c, std::size_t H, std::size_t W, std::size_t h,
                                             std::size_t w, std::size_t ty, std::size_t tx) {
  std::vector<std::size_t> idx;
  idx.reserve(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) idx.push_back((ch * H + ty * h + y) * W + tx * w + x);
  return idx;
}

inline void check_grouping(const Shape& s, std::size_t h, std::size_t w) {
  if (s.size() != 3) throw DimensionError("group: expected C x H x W, got " + shape_str(s));
  if (h == 0 || w == 0 || s[1] % h != 0 || s[2] % w != 0) {
    throw ConfigError("group: " + shape_str(s) + " cannot be tiled by " + std::to_string(h) + "x" +
                      std::to_string(w) + " units");
  }
}

}  // namespace detail

/// Cuts x into tiles enumerated row-major over the (H/h) x (W/w) grid.
inline std::vector<Tile> group(const Tensor& x, std::size_t h, std::size_t w) {
  ::agmb::detail::check_grouping(x.shape(), h, w);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<Tile> tiles;
  tiles.reserve((H / h) * (W / w));
  for (std::size_t ty = 0; ty < H / h; ++ty)
    for (std::size_t tx = 0; tx < W / w; ++tx) {
      const auto idx = ::agmb::detail::tile_indices(C, H, W, h, w, ty, tx);
      std::vector<double> d(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) d[i] = x[idx[i]];
      tiles.push_back(Tile{Tensor(Shape{C, h, w}, std::move(d)), ty, tx});
    }
  return tiles;
}

/// Inverse of group(). Tile i must carry grid position (i / (W/w), i % (W/w)).
inline Tensor merge(const std::vector<Tile>& tiles, std::size_t C, std::size_t H, std::size_t W) {
  if (tiles.empty()) throw DimensionError("merge: no tiles");
  const std::size_t h = tiles.front().data.shape().size() == 3 ? tiles.front().data.dim(1) : 0;
  const std::size_t w = tiles.front().data.shape().size() == 3 ? tiles.front().data.dim(2) : 0;
  if (h == 0 || H % h != 0 || W % w != 0) {
    throw DimensionError("merge: tile shape " + shape_str(tiles.front().data.shape()) + " does not tile " +
                         std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t gx = W / w;
  if (tiles.size() != (H / h) * gx) {
    throw DimensionError("merge: expected " + std::to_string((H / h) * gx) + " tiles, got " +
                         std::to_string(tiles.size()));
  }
  Tensor out(Shape{C, H, W});
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Tile& t = tiles[i];
    if (t.data.shape() != Shape{C, h, w}) {
      throw DimensionError("merge: tile " + std::to_string(i) + " has shape " + shape_str(t.data.shape()));
    }
    if (t.row != i / gx || t.col != i % gx) {
      throw DimensionError("merge: tile in slot " + std::to_string(i) + " claims grid position (" +
                           std::to_string(t.row) + "," + std::to_string(t.col) + ")");
    }
    const auto idx = ::agmb::detail::tile_indices(C, H, W, h, w, t.row, t.col);
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = t.data[k];
  }
  return out;
}

namespace ad {

inline std::vector<Var> group(Var x, std::size_t h, std::size_t w) {
  const Shape s = x.graph->value(x).shape();
  ::agmb::detail::check_grouping(s, h, w);
  std::vector<Var> tiles;
  for (std::size_t ty = 0; ty < s[1] / h; ++ty)
    for (std::size_t tx = 0; tx < s[2] / w; ++tx)
      tiles.push_back(gather(x, ::agmb::detail::tile_indices(s[0], s[1], s[2], h, w, ty, tx), Shape{s[0], h, w}));
  return tiles;
}

inline Var merge(const std::vector<Var>& tiles, std::size_t C, std::size_t H, std::size_t W) {
  if (tiles.empty()) throw DimensionError("merge: no tiles");
  const Shape ts = tiles.front().graph->value(tiles.front()).shape();
  if (ts.size() != 3 || ts[0] != C || H % ts[1] != 0 || W % ts[2] != 0 ||
      tiles.size() != (H / ts[1]) * (W / ts[2])) {
    throw DimensionError("merge: " + std::to_string(tiles.size()) + " tiles of " + shape_str(ts) +
                         " do not form a " + std::to_string(C) + "x" + std::to_string(H) + "x" +
                         std::to_string(W) + " map");
  }
  const std::size_t h = ts[1], w = ts[2], gx = W / w;
  // Position k of the concatenated tiles -> flat position in the merged map.
  std::vector<std::size_t> dest;
  dest.reserve(C * H * W);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto idx = ::agmb::detail::tile_indices(C, H, W, h, w, i / gx, i % gx);
    dest.insert(dest.end(), idx.begin(), idx.end());
  }
  std::vector<std::size_t> src(dest.size());
  for (std::size_t k = 0; k < dest.size(); ++k) src[dest[k]] = k;
  Var flat = concat_flat(tiles, Shape{C * H * W});
  return gather(flat, std::move(src), Shape{C, H, W});
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Parameters

/// Row/column position tables. position_matrix() yields r with
/// r[i*w + j] = R_h[i] + R_w[j].
struct RelativePositionEncoding {
  Tensor rel_h;  // h x d
  Tensor rel_w;  // w x d

  Tensor position_matrix() const {
    const std::size_t h = rel_h.dim(0), w = rel_w.dim(0), d = rel_h.dim(1);
    Tensor r(Shape{h * w, d});
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t c = 0; c < d; ++c) r.at(i * w + j, c) = rel_h.at(i, c) + rel_w.at(j, c);
    return r;
  }
};

struct GmhsaParams {
  Tensor reduce_w, reduce_b;  // C/phi x C, C/phi
  // C/phi x C/phi each; rows [j*d, (j+1)*d) of wq/wk/wv are head j's
  // projection. wo mixes the concatenated heads.
  Tensor wq, wk, wv, wo;
  Tensor rel_h, rel_w;        // h x d, w x d
  Tensor expand_w, expand_b;  // C x C/phi, C

  template <class Rng>
  static GmhsaParams init(const AttentionConfig& cfg, Rng& rng, double stddev = 0.02) {
    cfg.validate();
    const std::size_t c = cfg.channels, r = cfg.reduced_channels(), d = cfg.head_dim();
    GmhsaParams p;
    p.reduce_w = Tensor::randn({r, c}, rng, stddev);
    p.reduce_b = Tensor(Shape{r});
    p.wq = Tensor::randn({r, r}, rng, stddev);
    p.wk = Tensor::randn({r, r}, rng, stddev);
    p.wv = Tensor::randn({r, r}, rng, stddev);
    p.wo = Tensor::randn({r, r}, rng, stddev);
    p.rel_h = Tensor::randn({cfg.unit_h, d}, rng, stddev);
    p.rel_w = Tensor::randn({cfg.unit_w, d}, rng, stddev);
    p.expand_w = Tensor::randn({c, r}, rng, stddev);
    p.expand_b = Tensor(Shape{c});
    return p;
  }

  static GmhsaParams zeros(const AttentionConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.channels, r = cfg.reduced_channels(), d = cfg.head_dim();
    return GmhsaParams{Tensor({r, c}), Tensor(Shape{r}), Tensor({r, r}), Tensor({r, r}), Tensor({r, r}),
                       Tensor({r, r}), Tensor({cfg.unit_h, d}), Tensor({cfg.unit_w, d}), Tensor({c, r}),
                       Tensor(Shape{c})};
  }

  RelativePositionEncoding position() const { return {rel_h, rel_w}; }

  template <class Self, class F>
  static void visit(Self& self, F&& f, const std::string& prefix) {
    f(prefix + "reduce_w", self.reduce_w);
    f(prefix + "reduce_b", self.reduce_b);
    f(prefix + "wq", self.wq);
    f(prefix + "wk", self.wk);
    f(prefix + "wv", self.wv);
    f(prefix + "wo", self.wo);
    f(prefix + "rel_h", self.rel_h);
    f(prefix + "rel_w", self.rel_w);
    f(prefix + "expand_w", self.expand_w);
    f(prefix + "expand_b", self.expand_b);
  }
  template <class F>
  void for_each(F&& f, const std::string& prefix = "gmhsa.") {
    visit(*this, f, prefix);
  }
  template <class F>
  void for_each(F&& f, const std::string& prefix = "gmhsa.") const {
    visit(*this, f, prefix);
  }
};

struct GmhsaVars {
  Var reduce_w, reduce_b, wq, wk, wv, wo, rel_h, rel_w, expand_w, expand_b;
};

inline GmhsaVars bind(Graph& g, const GmhsaParams& p, const std::string& prefix = "gmhsa.") {
  GmhsaVars v;
  Var* slots[] = {&v.reduce_w, &v.reduce_b, &v.wq, &v.wk, &v.wv, &v.wo, &v.rel_h, &v.rel_w, &v.expand_w, &v.expand_b};
  std::size_t i = 0;
  p.for_each([&](const std::string& name, const Tensor& t) { *slots[i++] = g.parameter(t, name); }, prefix);
  return v;
}

// ---------------------------------------------------------------------------
// Attention

/// Per-head softmax weight matrices (queries x keys) captured for inspection.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

namespace ad {

/// Position matrix r (h*w x d) from the row and column tables.
inline Var position_matrix(Var rel_h, Var rel_w) {
  const Tensor& rh = rel_h.graph->value(rel_h);
  const Tensor& rw = rel_w.graph->value(rel_w);
  if (rh.rank() != 2 || rw.rank() != 2 || rh.dim(1) != rw.dim(1)) {
    throw DimensionError("position tables must share the key dimension: " + shape_str(rh.shape()) + " vs " +
                         shape_str(rw.shape()));
  }
  const std::size_t h = rh.dim(0), w = rw.dim(0), d = rh.dim(1);
  std::vector<std::size_t> row_idx, col_idx;
  row_idx.reserve(h * w * d);
  col_idx.reserve(h * w * d);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        row_idx.push_back(i * d + c);
        col_idx.push_back(j * d + c);
      }
  return add(gather(rel_h, std::move(row_idx), Shape{h * w, d}), gather(rel_w, std::move(col_idx), Shape{h * w, d}));
}

/// Multi-head self-attention over the h*w positions of one reduced tile
/// (C' x h x w). Per head the logits are (q k^T + q r^T) / sqrt(d), computed
/// as q (k + r)^T so that the position term costs no extra matmul.
inline Var unit_attention(Var x_unit, const GmhsaVars& p, std::size_t heads, AttentionTrace* trace = nullptr) {
  Graph& g = *x_unit.graph;
  const Shape s = g.value(x_unit).shape();
  if (s.size() != 3) throw DimensionError("unit_attention: expected C x h x w tile, got " + shape_str(s));
  const std::size_t c = s[0], h = s[1], w = s[2], positions = h * w;
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("unit_attention: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t d = c / heads;
  const Tensor& rh = g.value(p.rel_h);
  const Tensor& rw = g.value(p.rel_w);
  if (rh.dim(0) != h || rw.dim(0) != w || rh.dim(1) != d) {
    throw ConfigError("unit_attention: position tables " + shape_str(rh.shape()) + "/" + shape_str(rw.shape()) +
                      " do not fit a " + std::to_string(h) + "x" + std::to_string(w) + " unit with head dim " +
                      std::to_string(d));
  }

  Var x = reshape(x_unit, Shape{c, positions});
  Var q = matmul(p.wq, x);
  Var k = matmul(p.wk, x);
  Var v = matmul(p.wv, x);
  Var r_t = transpose(position_matrix(p.rel_h, p.rel_w));  // d x P
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t j = 0; j < heads; ++j) {
    Var qh = rows(q, j * d, d);
    Var kh = add(rows(k, j * d, d), r_t);
    Var vh = rows(v, j * d, d);
    Var logits = scale(matmul(transpose(qh), kh), inv_sqrt_d);  // P x P, [query, key]
    Var weights = softmax(logits, 1);
    if (trace) trace->weights.push_back(g.value(weights));
    head_out.push_back(matmul(vh, transpose(weights)));  // d x P
  }
  Var heads_cat = concat_flat(head_out, Shape{c, positions});
  return reshape(matmul(p.wo, heads_cat), Shape{c, h, w});
}

struct GmhsaOptions {
  // Processing order of the tiles; empty means 0..N-1. Results are always
  // merged by tile index.
  std::vector<std::size_t> tile_order;
  AttentionTrace* trace = nullptr;
  // Receives the merged attention output before the expand convolution.
  std::optional<Var>* pre_expand = nullptr;
};

inline Var gmhsa_forward(Var x, const AttentionConfig& cfg, const GmhsaVars& p, const GmhsaOptions& opt = {}) {
  cfg.validate();
  const Shape s = x.graph->value(x).shape();
  if (s != Shape{cfg.channels, cfg.height, cfg.width}) {
    throw DimensionError("gmhsa_forward: input " + shape_str(s) + " does not match config " +
                         shape_str({cfg.channels, cfg.height, cfg.width}));
  }
  Var reduced = conv1x1(x, p.reduce_w, p.reduce_b);
  std::vector<Var> tiles = group(reduced, cfg.unit_h, cfg.unit_w);

  std::vector<std::size_t> order = opt.tile_order;
  if (order.empty()) {
    order.resize(tiles.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  std::vector<bool> seen(tiles.size(), false);
  if (order.size() != tiles.size()) throw UsageError("gmhsa_forward: tile order must list every tile once");
  for (auto i : order) {
    if (i >= tiles.size() || seen[i]) throw UsageError("gmhsa_forward: tile order must list every tile once");
    seen[i] = true;
  }

  std::vector<std::optional<Var>> attended(tiles.size());
  for (auto i : order) attended[i] = unit_attention(tiles[i], p, cfg.heads, opt.trace);
  std::vector<Var> outs;
  outs.reserve(tiles.size());
  for (auto& a : attended) outs.push_back(*a);

  Var merged = merge(outs, cfg.reduced_channels(), cfg.height, cfg.width);
  if (opt.pre_expand) *opt.pre_expand = merged;
  return conv1x1(merged, p.expand_w, p.expand_b);
}

}  // namespace ad

// Plain-tensor entry points; each builds and discards a private graph.

inline Tensor unit_attention(const Tensor& x_unit, const GmhsaParams& p, std::size_t heads,
                             AttentionTrace* trace = nullptr) {
  Graph g;
  const GmhsaVars v = agmb::bind(g, p);
  return g.value(ad::unit_attention(g.constant(x_unit), v, heads, trace));
}

inline Tensor gmhsa_forward(const Tensor& x, const AttentionConfig& cfg, const GmhsaParams& p,
                            const ad::GmhsaOptions& opt = {}) {
  Graph g;
  const GmhsaVars v = agmb::bind(g, p);
  return g.value(ad::gmhsa_forward(g.constant(x), cfg, v, opt));
}

}  // namespace agmb
