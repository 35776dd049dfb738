#pragma once

// Forward kernels on plain tensors. These are pure functions; the
// differentiable wrappers in autodiff.hpp call them and add backward rules.

#include <agmb/tensor.hpp>

#include <cstdint>
#include <limits>
#include <vector>

namespace agmb {

// Counts multiply-accumulates performed by matmul and grouped_conv2d while a
// counter is active on the current thread. Counters nest: an inner counter's
// total is added to the enclosing one when it goes out of scope.
class MacCounter {
 public:
  MacCounter() : prev_(active()) { active() = this; }
  ~MacCounter() {
    active() = prev_;
    if (prev_) prev_->count_ += count_;
  }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }

  static void record(std::uint64_t macs) noexcept {
    if (auto* c = active()) c->count_ += macs;
  }

 private:
  static MacCounter*& active() noexcept {
    thread_local MacCounter* current = nullptr;
    return current;
  }

  MacCounter* prev_;
  std::uint64_t count_ = 0;
};

namespace ops {

namespace detail {

// Uncounted a[m x k] * b[k x n] accumulated into out.
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m,
                     std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* orow = out + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  detail::gemm_acc(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  MacCounter::record(static_cast<std::uint64_t>(m) * k * n);
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

/// Numerically stable softmax along `axis` (max is subtracted first).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < sp.extent; ++a) mx = std::max(mx, x[base + a * sp.inner]);
      double sum = 0.0;
      for (std::size_t a = 0; a < sp.extent; ++a) {
        const double e = std::exp(x[base + a * sp.inner] - mx);
        out[base + a * sp.inner] = e;
        sum += e;
      }
      for (std::size_t a = 0; a < sp.extent; ++a) out[base + a * sp.inner] /= sum;
    }
  }
  return out;
}

struct ConvGeometry {
  std::size_t c_in, h_in, w_in, c_out, k, groups, stride, h_out, w_out;
  std::size_t in_per_group() const { return c_in / groups; }
  std::size_t out_per_group() const { return c_out / groups; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t groups,
                                  std::size_t stride) {
  if (x.size() != 3) throw DimensionError("grouped_conv2d: input must be C x H x W, got " + shape_str(x));
  if (w.size() != 4) {
    throw DimensionError("grouped_conv2d: weights must be Cout x Cin/g x k x k, got " + shape_str(w));
  }
  if (groups == 0 || stride == 0) throw ConfigError("grouped_conv2d: groups and stride must be >= 1");
  ConvGeometry g{x[0], x[1], x[2], w[0], w[2], groups, stride, 0, 0};
  if (w[2] != w[3]) throw DimensionError("grouped_conv2d: kernel must be square, got " + shape_str(w));
  if (g.c_in % groups != 0 || g.c_out % groups != 0) {
    throw ConfigError("grouped_conv2d: channels (" + std::to_string(g.c_in) + " in, " +
                      std::to_string(g.c_out) + " out) not divisible by groups " +
                      std::to_string(groups));
  }
  if (w[1] != g.c_in / groups) {
    throw DimensionError("grouped_conv2d: weights " + shape_str(w) + " incompatible with input " +
                         shape_str(x) + " and groups " + std::to_string(groups));
  }
  if (g.h_in < g.k || g.w_in < g.k) {
    throw DimensionError("grouped_conv2d: kernel " + std::to_string(g.k) +
                         " larger than input " + shape_str(x));
  }
  g.h_out = (g.h_in - g.k) / stride + 1;
  g.w_out = (g.w_in - g.k) / stride + 1;
  return g;
}

/// Valid (unpadded) grouped convolution. Output group j sees only input group j.
inline Tensor grouped_conv2d(const Tensor& x, const Tensor& w, std::size_t groups,
                             std::size_t stride = 1) {
  const auto g = conv_geometry(x.shape(), w.shape(), groups, stride);
  const std::size_t ipg = g.in_per_group(), opg = g.out_per_group();
  Tensor out(Shape{g.c_out, g.h_out, g.w_out});
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const std::size_t grp = co / opg;
    for (std::size_t oy = 0; oy < g.h_out; ++oy) {
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < ipg; ++ci) {
          const std::size_t cin = grp * ipg + ci;
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              acc += w[((co * ipg + ci) * g.k + ky) * g.k + kx] *
                     x.at(cin, oy * stride + ky, ox * stride + kx);
            }
          }
        }
        out.at(co, oy, ox) = acc;
      }
    }
  }
  MacCounter::record(static_cast<std::uint64_t>(g.c_out) * ipg * g.k * g.k * g.h_out * g.w_out);
  return out;
}

namespace detail {

inline void conv_backward(const Tensor& x, const Tensor& w, const Tensor& grad_out,
                          std::size_t groups, std::size_t stride, Tensor* grad_x,
                          Tensor* grad_w) {
  const auto g = conv_geometry(x.shape(), w.shape(), groups, stride);
  const std::size_t ipg = g.in_per_group(), opg = g.out_per_group();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const std::size_t grp = co / opg;
    for (std::size_t oy = 0; oy < g.h_out; ++oy) {
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        const double go = grad_out.at(co, oy, ox);
        if (go == 0.0) continue;
        for (std::size_t ci = 0; ci < ipg; ++ci) {
          const std::size_t cin = grp * ipg + ci;
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const std::size_t widx = ((co * ipg + ci) * g.k + ky) * g.k + kx;
              const std::size_t iy = oy * stride + ky, ix = ox * stride + kx;
              if (grad_x) grad_x->at(cin, iy, ix) += go * w[widx];
              if (grad_w) (*grad_w)[widx] += go * x.at(cin, iy, ix);
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor avg_pool2d(const Tensor& x, std::size_t window, std::size_t stride) {
  detail::require_rank(x, 3, "avg_pool2d");
  if (window == 0 || stride == 0) throw ConfigError("avg_pool2d: window and stride must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < window || w < window) {
    throw DimensionError("avg_pool2d: window " + std::to_string(window) + " larger than input " +
                         shape_str(x.shape()));
  }
  const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  const double inv = 1.0 / static_cast<double>(window * window);
  Tensor out(Shape{c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) s += x.at(ch, oy * stride + dy, ox * stride + dx);
        out.at(ch, oy, ox) = s * inv;
      }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Split by sign so exp never overflows.
    const double v = x[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

/// Adds bias[c] to every element of channel c of a C x H x W map.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 3, "add_channel_bias");
  if (bias.size() != x.dim(0)) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) +
                         " does not match channels of " + shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t plane = x.dim(1) * x.dim(2);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bias[c];
  return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 3, "concat_channels");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2)) {
      throw DimensionError("concat_channels: spatial mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    channels += p.dim(0);
  }
  std::vector<double> d;
  d.reserve(channels * parts[0].dim(1) * parts[0].dim(2));
  for (const auto& p : parts) d.insert(d.end(), p.values().begin(), p.values().end());
  return Tensor(Shape{channels, parts[0].dim(1), parts[0].dim(2)}, std::move(d));
}

inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 3, "global_avg_pool");
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor out(Shape{x.dim(0)});
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
    out[c] = s / static_cast<double>(plane);
  }
  return out;
}

inline double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

}  // namespace ops
}  // namespace agmb
