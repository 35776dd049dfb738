#pragma once

// Analytical cost model for whole-map MHSA and grouped GMHSA.
//
// Accounting convention: one multiply-accumulate of a matrix product or
// convolution counts as one FLOP unit, the convention under which
// 4HWC^2 + 2(HW)^2C is exactly the work of the q/k/v/output projections
// plus the two attention products. Softmax, scaling and additions are not
// counted. MacCounter instruments the same quantity at run time.

#include <agmb/gmhsa.hpp>

#include <cstdint>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace agmb {

enum class AttentionVariant { MHSA, GMHSA };

inline const char* variant_name(AttentionVariant v) { return v == AttentionVariant::MHSA ? "MHSA" : "GMHSA"; }

struct FeatureSize {
  std::size_t channels, height, width;
};

struct CostReport {
  AttentionVariant variant;
  std::size_t channels, height, width;
  std::size_t unit_h, unit_w;  // equal to H, W for MHSA
  std::size_t phi;             // 1 for MHSA
  std::uint64_t flops;
  std::uint64_t memory_bytes;
};

namespace detail {
inline void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(std::string("cost: ") + what + " must be >= 1");
}
}  // namespace detail

inline std::uint64_t flops_mhsa(std::uint64_t C, std::uint64_t H, std::uint64_t W) {
  detail::require_positive(C, "C");
  detail::require_positive(H, "H");
  detail::require_positive(W, "W");
  const std::uint64_t hw = H * W;
  return 4 * hw * C * C + 2 * hw * hw * C;
}

inline std::uint64_t flops_gmhsa_per_unit(std::uint64_t C, std::uint64_t h, std::uint64_t w, std::uint64_t phi) {
  detail::require_positive(C, "C");
  detail::require_positive(h, "h");
  detail::require_positive(w, "w");
  detail::require_positive(phi, "phi");
  if (C % phi != 0) throw ConfigError("cost: C=" + std::to_string(C) + " not divisible by phi=" + std::to_string(phi));
  const std::uint64_t r = C / phi, hw = h * w;
  return 4 * hw * r * r + 2 * hw * hw * r;
}

/// Attention work over all N units, without the bottleneck convolutions.
inline std::uint64_t flops_gmhsa_units(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t h,
                                       std::uint64_t w, std::uint64_t phi) {
  detail::require_positive(H, "H");
  detail::require_positive(W, "W");
  const std::uint64_t unit = flops_gmhsa_per_unit(C, h, w, phi);
  if (H % h != 0 || W % w != 0) {
    throw ConfigError("cost: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by unit " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  return (H / h) * (W / w) * unit;
}

/// Units plus the reduce (C -> C/phi) and expand (C/phi -> C) 1x1 convolutions.
inline std::uint64_t flops_gmhsa_total(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t h,
                                       std::uint64_t w, std::uint64_t phi) {
  return flops_gmhsa_units(C, H, W, h, w, phi) + 2 * H * W * C * (C / phi);
}

// Memory model: every intermediate of a recorded forward pass stays live
// until backward, so the peak is the sum of their element counts, times 8
// bytes. Only meaningful for relative comparison.

inline std::uint64_t memory_mhsa(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t heads) {
  const std::uint64_t hw = H * W;
  // input, q, k, v, attended, projected output; logits and weights per head
  const std::uint64_t elems = 6 * hw * C + 2 * heads * hw * hw;
  return elems * sizeof(double);
}

inline std::uint64_t memory_gmhsa(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t h,
                                  std::uint64_t w, std::uint64_t phi, std::uint64_t heads) {
  const std::uint64_t hw = H * W, r = C / phi;
  // input and expanded output at C channels; reduced map, tiles, q, k, k+r,
  // v, attended, projected and merged maps at C/phi; per-unit logits and
  // weights per head.
  const std::uint64_t elems = 2 * hw * C + 9 * hw * r + 2 * heads * hw * (h * w);
  return elems * sizeof(double);
}

/// Multiply-accumulates executed by `fn` through the tensor kernels.
inline std::uint64_t count_ops_instrumented(const std::function<void()>& fn) {
  MacCounter counter;
  fn();
  return counter.count();
}

struct SweepOptions {
  std::size_t unit_h = 8;
  std::size_t unit_w = 8;
  std::size_t phi = 4;
  std::size_t heads = 4;
};

inline CostReport cost_report(AttentionVariant variant, const FeatureSize& fs, const SweepOptions& opt) {
  if (variant == AttentionVariant::MHSA) {
    return CostReport{variant, fs.channels, fs.height, fs.width, fs.height, fs.width, 1,
                      flops_mhsa(fs.channels, fs.height, fs.width),
                      memory_mhsa(fs.channels, fs.height, fs.width, opt.heads)};
  }
  return CostReport{variant, fs.channels, fs.height, fs.width, opt.unit_h, opt.unit_w, opt.phi,
                    flops_gmhsa_total(fs.channels, fs.height, fs.width, opt.unit_h, opt.unit_w, opt.phi),
                    memory_gmhsa(fs.channels, fs.height, fs.width, opt.unit_h, opt.unit_w, opt.phi, opt.heads)};
}

/// One report per (size, variant), sizes in the given order.
inline std::vector<CostReport> sweep(const std::vector<FeatureSize>& sizes,
                                     const std::vector<AttentionVariant>& variants, const SweepOptions& opt = {}) {
  if (sizes.empty()) throw UsageError("cost sweep: no feature sizes given");
  if (variants.empty()) throw UsageError("cost sweep: no variants given");
  std::vector<CostReport> out;
  for (const auto& fs : sizes)
    for (auto v : variants) out.push_back(cost_report(v, fs, opt));
  return out;
}

/// Feature sizes of the MHSA/GMHSA comparison table (C = 16).
inline std::vector<FeatureSize> spatial_sweep_sizes() {
  std::vector<FeatureSize> s;
  for (std::size_t n : {40, 56, 72, 88, 104, 120, 136, 144}) s.push_back({16, n, n});
  return s;
}

/// Feature sizes of the channel sweep table (40 x 40).
inline std::vector<FeatureSize> channel_sweep_sizes() {
  std::vector<FeatureSize> s;
  for (std::size_t c : {128, 256, 512, 1024, 2048, 4096}) s.push_back({c, 40, 40});
  return s;
}

/// MHSA FLOPs (G) published for spatial_sweep_sizes(), in the same order.
inline const std::vector<double>& reference_spatial_mhsa_gflops() {
  static const std::vector<double> v{0.087, 0.328, 0.888, 1.968, 3.824, 6.757, 11.125, 13.966};
  return v;
}

/// GMHSA FLOPs (G) published for spatial_sweep_sizes() with 8 x 8 units.
inline const std::vector<double>& reference_spatial_gmhsa_gflops() {
  static const std::vector<double> v{0.005, 0.010, 0.017, 0.026, 0.036, 0.047, 0.061, 0.068};
  return v;
}

/// GMHSA FLOPs (G) published for channel_sweep_sizes().
inline const std::vector<double>& reference_channel_gmhsa_gflops() {
  static const std::vector<double> v{0.77, 1.69, 4.01, 10.53, 31.14, 102.54};
  return v;
}

inline std::string format_cost_table(const std::vector<CostReport>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-7s %6s %5s %5s %4s %4s %4s %16s %12s %14s %10s\n", "variant", "C", "H", "W", "h",
                "w", "phi", "flops", "GFLOPs", "memory_bytes", "MB");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-7s %6zu %5zu %5zu %4zu %4zu %4zu %16llu %12.6f %14llu %10.3f\n",
                  variant_name(r.variant), r.channels, r.height, r.width, r.unit_h, r.unit_w, r.phi,
                  static_cast<unsigned long long>(r.flops), static_cast<double>(r.flops) / 1e9,
                  static_cast<unsigned long long>(r.memory_bytes),
                  static_cast<double>(r.memory_bytes) / (1024.0 * 1024.0));
    os << buf;
  }
  return os.str();
}

inline std::string format_cost_csv(const std::vector<CostReport>& rows) {
  std::ostringstream os;
  os << "variant,C,H,W,h,w,phi,flops,memory_bytes\n";
  for (const auto& r : rows) {
    os << variant_name(r.variant) << ',' << r.channels << ',' << r.height << ',' << r.width << ',' << r.unit_h << ','
       << r.unit_w << ',' << r.phi << ',' << r.flops << ',' << r.memory_bytes << '\n';
  }
  return os.str();
}

}  // namespace agmb
