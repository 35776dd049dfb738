#pragma once

// Seeded synthetic data: noisy-parabola landmark cases with a known true
// boundary, random prediction tables, and the degree sweep over a corpus of
// landmark cases.

#include <agmb/io.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace agmb::synth {

struct LandmarkOptions {
  std::size_t height = 256, width = 256;
  double noise = 1.5;       // boundary y jitter, uniform in [-noise, noise] px
  double max_angle = 0.3;   // canal tilt, uniform in [-max_angle, max_angle] rad
  bool with_axis = true;
};

struct LandmarkCase {
  LandmarkSet landmarks;       // raw (tilted) frame
  PolynomialCurve truth;       // true boundary, corrected frame
  double angle = 0.0;          // rotation that makes the canal vertical
  Point center;
};

inline Point image_center(std::size_t height, std::size_t width) {
  return {(static_cast<double>(width) - 1.0) / 2.0, (static_cast<double>(height) - 1.0) / 2.0};
}

/// Parabola y = a (x - x0)^2 + y0 in the upright frame, sampled at 19 evenly
/// spaced x with y noise, then tilted by -angle about the image center.
inline LandmarkCase noisy_parabola(std::uint64_t seed, const LandmarkOptions& opt = {}) {
  if (opt.height < 64 || opt.width < 64) throw UsageError("synthetic landmarks need an image of at least 64x64");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double W = static_cast<double>(opt.width), H = static_cast<double>(opt.height);
  const double x0 = W / 2.0 + (u(rng) - 0.5) * 0.1 * W;
  const double y0 = H * (0.3 + 0.1 * u(rng));
  const double half = W * (0.25 + 0.05 * u(rng));
  // Depth of the curve across its span: 15-30 % of the image height.
  const double a = H * (0.15 + 0.15 * u(rng)) / (half * half);
  const double angle = opt.with_axis ? (2.0 * u(rng) - 1.0) * opt.max_angle : 0.0;

  LandmarkCase c;
  c.center = image_center(opt.height, opt.width);
  c.angle = angle;
  c.truth = PolynomialCurve::from_coefficients({a, -2.0 * a * x0, a * x0 * x0 + y0}, x0 - half, x0 + half);

  std::vector<Point> upright;
  for (std::size_t i = 0; i < kBoundaryLandmarks; ++i) {
    const double x = x0 - half + 2.0 * half * static_cast<double>(i) / static_cast<double>(kBoundaryLandmarks - 1);
    const double y = c.truth.evaluate(x) + (2.0 * u(rng) - 1.0) * opt.noise;
    upright.push_back({x, y});
  }
  const Point apex{x0, y0 - 0.15 * H};
  c.landmarks.boundary = rotate_points(upright, -angle, c.center);
  c.landmarks.gutta_apex = rotate_point(apex, -angle, c.center);
  if (opt.with_axis) {
    const double len = 0.3 * H;
    const Point top{c.center.x, c.center.y - len / 2}, bottom{c.center.x, c.center.y + len / 2};
    c.landmarks.canal_axis = {rotate_point(top, -angle, c.center), rotate_point(bottom, -angle, c.center)};
  }
  return c;
}

/// y = x^2 at x = -9..9, apex (0, -5), no canal axis.
inline LandmarkSet exact_unit_parabola() {
  LandmarkSet lm;
  for (int i = -9; i <= 9; ++i) lm.boundary.push_back({static_cast<double>(i), static_cast<double>(i * i)});
  lm.gutta_apex = {0.0, -5.0};
  return lm;
}

/// Random labels and scores for K classes; roughly `accuracy` of the rows are
/// predicted correctly and the predicted class always has the top score.
inline io::Predictions random_predictions(std::uint64_t seed, std::size_t rows, std::size_t classes = 3,
                                          double accuracy = 0.8) {
  if (rows == 0) throw UsageError("need at least one prediction row");
  if (classes < 2) throw UsageError("need at least two classes");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(classes) - 1);
  io::Predictions p;
  p.classes = classes;
  for (std::size_t i = 0; i < rows; ++i) {
    const int t = cls(rng);
    int pred = t;
    if (u(rng) > accuracy) pred = static_cast<int>((static_cast<std::size_t>(t) + 1 + rng() % (classes - 1)) % classes);
    std::vector<double> raw(classes);
    double sum = 0.0;
    for (auto& r : raw) sum += (r = 0.05 + u(rng));
    raw[static_cast<std::size_t>(pred)] += 1.0;
    sum += 1.0;
    for (auto& r : raw) r /= sum;
    p.y_true.push_back(t);
    p.y_pred.push_back(pred);
    p.scores.push_back(std::move(raw));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Degree sweep

struct SweepRow {
  std::size_t degree = 0;
  std::vector<double> asd, hd95;  // one per case, mm
  double mean_asd = 0.0, std_asd = 0.0, mean_hd95 = 0.0, std_hd95 = 0.0;
};

struct SweepSettings {
  std::size_t cases = 100;
  std::uint64_t seed = 42;
  double spacing = 0.1;  // mm per pixel
  double step = 0.5;     // curve sampling step, px
  LandmarkOptions landmarks;
};

namespace detail {
inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}
}  // namespace detail

/// Case i uses seed settings.seed + i. Fitted and true boundaries are both
/// sampled over the true curve's x-range in the corrected frame.
inline std::vector<SweepRow> degree_sweep(const std::vector<std::size_t>& degrees, const SweepSettings& s = {}) {
  std::vector<SweepRow> rows;
  for (auto d : degrees) rows.push_back(SweepRow{d, {}, {}});
  for (std::size_t i = 0; i < s.cases; ++i) {
    const auto c = noisy_parabola(s.seed + i, s.landmarks);
    const SurfacePointSet truth{curve_to_pointset(c.truth, s.step), s.spacing};
    for (auto& row : rows) {
      auto fit = fit_landmarks(c.landmarks, row.degree, c.center);
      fit.curve.x_min = c.truth.x_min;
      fit.curve.x_max = c.truth.x_max;
      const SurfacePointSet seg{curve_to_pointset(fit.curve, s.step), s.spacing};
      row.asd.push_back(asd(seg, truth));
      row.hd95.push_back(hd95(seg, truth));
    }
  }
  for (auto& row : rows) {
    detail::mean_std(row.asd, row.mean_asd, row.std_asd);
    detail::mean_std(row.hd95, row.mean_hd95, row.std_hd95);
  }
  return rows;
}

}  // namespace agmb::synth
