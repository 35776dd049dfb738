#pragma once

// Fitting segmentation of the apical boundary.
//
// Landmarks are rotated so the root canal is vertical, a degree-δ polynomial
// is fitted to the 19 boundary landmarks by ordinary least squares, and the
// curve is rasterized one pixel wide. Together with the gutta-percha apex
// pixel it forms the anatomy feature channel.

#include <agmb/tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace agmb {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline constexpr std::size_t kBoundaryLandmarks = 19;

struct LandmarkSet {
  std::vector<Point> boundary;  // left to right
  Point gutta_apex;
  std::optional<std::pair<Point, Point>> canal_axis;

  void validate() const {
    if (boundary.size() != kBoundaryLandmarks) {
      throw UsageError("landmark set needs exactly " + std::to_string(kBoundaryLandmarks) +
                       " boundary points, got " + std::to_string(boundary.size()));
    }
    if (canal_axis && canal_axis->first == canal_axis->second) {
      throw DegenerateInputError("canal axis points coincide");
    }
  }
};

// ---------------------------------------------------------------------------
// Rotation correction

/// Signed angle between the canal direction and the vertical axis, in
/// (-pi/2, pi/2]. Positive when the canal leans towards +x as y grows.
inline double rotation_angle(const Point& a, const Point& b) {
  double dx = b.x - a.x, dy = b.y - a.y;
  if (dx == 0.0 && dy == 0.0) throw DegenerateInputError("rotation_angle: canal axis points coincide");
  // The axis is undirected; orient it towards +y (or +x when horizontal).
  if (dy < 0.0 || (dy == 0.0 && dx < 0.0)) {
    dx = -dx;
    dy = -dy;
  }
  return std::atan2(dx, dy);
}

inline double rotation_angle(const std::pair<Point, Point>& axis) { return rotation_angle(axis.first, axis.second); }

/// Rigid rotation by `angle` (counter-clockwise in x/y) about `center`.
inline std::vector<Point> rotate_points(const std::vector<Point>& pts, double angle, const Point& center = {}) {
  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<Point> out;
  out.reserve(pts.size());
  for (const auto& p : pts) {
    const double dx = p.x - center.x, dy = p.y - center.y;
    out.push_back({center.x + c * dx - s * dy, center.y + s * dx + c * dy});
  }
  return out;
}

inline Point rotate_point(const Point& p, double angle, const Point& center = {}) {
  return rotate_points({p}, angle, center).front();
}

// ---------------------------------------------------------------------------
// Least-squares fitting

struct PolynomialCurve {
  std::size_t degree = 2;
  std::vector<double> coefficients;  // highest degree first, in raw x
  double x_min = 0.0;
  double x_max = 0.0;
  // Fitting ran on t = (x - center) / scale; normalized holds those
  // coefficients (highest first) and is what evaluate() uses.
  double center = 0.0;
  double scale = 1.0;
  std::vector<double> normalized;

  double evaluate(double x) const {
    if (normalized.empty()) {
      double acc = 0.0;
      for (double c : coefficients) acc = acc * x + c;
      return acc;
    }
    const double t = (x - center) / scale;
    double acc = 0.0;
    for (double c : normalized) acc = acc * t + c;
    return acc;
  }

  /// Curve given directly by raw coefficients (highest first).
  static PolynomialCurve from_coefficients(std::vector<double> coeffs, double x_min, double x_max) {
    if (coeffs.empty()) throw UsageError("polynomial needs at least one coefficient");
    PolynomialCurve c;
    c.degree = coeffs.size() - 1;
    c.coefficients = std::move(coeffs);
    c.x_min = x_min;
    c.x_max = x_max;
    return c;
  }
};

namespace detail {

// Solves a (row-major, n x n) x = b by Gaussian elimination with partial
// pivoting. Throws FitError when a pivot vanishes relative to the matrix scale.
inline std::vector<double> solve_pivoted(std::vector<double> a, std::vector<double> b, std::size_t n) {
  double norm = 0.0;
  for (double v : a) norm = std::max(norm, std::abs(v));
  const double tiny = norm * 1e-13 * static_cast<double>(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (!(std::abs(a[piv * n + col]) > tiny)) throw FitError("least-squares system is rank deficient");
    if (piv != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i * n + k] * x[k];
    x[i] = s / a[i * n + i];
  }
  return x;
}

}  // namespace detail

/// Ordinary least-squares polynomial of degree `degree` through `pts`.
///
/// Builds the normal equations (sum t^(i+j)) on centered, max-abs scaled x
/// and solves them with partial pivoting; for degree 2 this is the 3 x 3
/// system in sums of x^4 .. x^0. Coefficients are then expanded back to raw
/// x.
inline PolynomialCurve fit_polynomial(const std::vector<Point>& pts, std::size_t degree) {
  const std::size_t m = degree + 1;
  if (pts.size() < m) {
    throw InsufficientDataError("degree " + std::to_string(degree) + " fit needs at least " + std::to_string(m) +
                                " points, got " + std::to_string(pts.size()));
  }
  std::vector<double> xs;
  for (const auto& p : pts) xs.push_back(p.x);
  std::sort(xs.begin(), xs.end());
  const auto distinct = static_cast<std::size_t>(std::unique(xs.begin(), xs.end()) - xs.begin());
  if (distinct < m) {
    throw FitError("degree " + std::to_string(degree) + " fit needs " + std::to_string(m) +
                   " distinct x values, got " + std::to_string(distinct));
  }

  double center = 0.0;
  for (const auto& p : pts) center += p.x;
  center /= static_cast<double>(pts.size());
  double scale = 0.0;
  for (const auto& p : pts) scale = std::max(scale, std::abs(p.x - center));

  // power_sums[k] = sum t^k, k = 0..2*degree; moments[k] = sum t^k y.
  std::vector<double> power_sums(2 * degree + 1, 0.0), moments(m, 0.0);
  for (const auto& p : pts) {
    const double t = (p.x - center) / scale;
    double tp = 1.0;
    for (std::size_t k = 0; k <= 2 * degree; ++k) {
      power_sums[k] += tp;
      if (k < m) moments[k] += tp * p.y;
      tp *= t;
    }
  }
  // Unknowns ordered highest power first: row i pairs with t^(degree-i).
  std::vector<double> gram(m * m), rhs(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) gram[i * m + j] = power_sums[2 * degree - i - j];
    rhs[i] = moments[degree - i];
  }
  const std::vector<double> norm_coeffs = detail::solve_pivoted(gram, rhs, m);

  // p(x) = sum_k n_k ((x - c)/s)^k; expand into raw powers of x.
  std::vector<double> raw(m, 0.0);  // raw[k] multiplies x^k
  for (std::size_t k = 0; k < m; ++k) {
    const double nk = norm_coeffs[degree - k] / std::pow(scale, static_cast<double>(k));
    // (x - c)^k = sum_j C(k, j) x^j (-c)^(k-j)
    double cjk = 1.0;
    for (std::size_t j = 0; j <= k; ++j) {
      if (j > 0) cjk = cjk * static_cast<double>(k - j + 1) / static_cast<double>(j);
      raw[j] += nk * cjk * std::pow(-center, static_cast<double>(k - j));
    }
  }
  PolynomialCurve curve;
  curve.degree = degree;
  curve.coefficients.assign(raw.rbegin(), raw.rend());
  curve.x_min = *std::min_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(distinct));
  curve.x_max = xs[distinct - 1];
  curve.center = center;
  curve.scale = scale;
  curve.normalized = norm_coeffs;
  return curve;
}

inline double residual_sum_squares(const std::vector<Point>& pts, const std::vector<double>& coeffs_highest_first) {
  double s = 0.0;
  for (const auto& p : pts) {
    double y = 0.0;
    for (double c : coeffs_highest_first) y = y * p.x + c;
    s += (p.y - y) * (p.y - y);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Rasterization and channel composition

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {
    if (h == 0 || w == 0) throw DimensionError("mask dims must be >= 1");
  }

  bool get(std::size_t y, std::size_t x) const { return pixels[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x) { pixels[y * width + x] = 1; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto p : pixels) n += p;
    return n;
  }
  std::size_t column_count(std::size_t x) const {
    std::size_t n = 0;
    for (std::size_t y = 0; y < height; ++y) n += get(y, x) ? 1 : 0;
    return n;
  }
};

/// Sets pixel (x, round(p(x))) for every integer x in the curve's domain that
/// lands inside the image. Rounding is half away from zero.
inline BinaryMask rasterize(const PolynomialCurve& curve, std::size_t height, std::size_t width) {
  BinaryMask mask(height, width);
  const double lo = std::max(0.0, std::ceil(curve.x_min));
  const double hi = std::min(static_cast<double>(width) - 1.0, std::floor(curve.x_max));
  for (double x = lo; x <= hi; x += 1.0) {
    const double y = std::round(curve.evaluate(x));
    if (y >= 0.0 && y < static_cast<double>(height)) mask.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
  return mask;
}

/// Curve pixels plus the gutta-percha apex pixel (if inside the image).
inline BinaryMask anatomy_feature(const PolynomialCurve& curve, const Point& gutta_apex, std::size_t height,
                                  std::size_t width) {
  BinaryMask mask = rasterize(curve, height, width);
  const double ax = std::round(gutta_apex.x), ay = std::round(gutta_apex.y);
  if (ax >= 0 && ay >= 0 && ax < static_cast<double>(width) && ay < static_cast<double>(height)) {
    mask.set(static_cast<std::size_t>(ay), static_cast<std::size_t>(ax));
  }
  return mask;
}

enum class InputMode { Image, Anatomy, Combined };

/// Network input for one of the three input variants: the 3-channel image,
/// the 1-channel anatomy mask, or both stacked (image first).
inline Tensor compose_input(const Tensor& image, const BinaryMask& anatomy, InputMode mode) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("compose_input: image must be 3 x H x W, got " + shape_str(image.shape()));
  if (image.dim(1) != anatomy.height || image.dim(2) != anatomy.width) {
    throw DimensionError("compose_input: image " + shape_str(image.shape()) + " vs mask " +
                         std::to_string(anatomy.height) + "x" + std::to_string(anatomy.width));
  }
  const std::size_t plane = anatomy.height * anatomy.width;
  std::vector<double> mask_plane(plane);
  for (std::size_t i = 0; i < plane; ++i) mask_plane[i] = anatomy.pixels[i] ? 1.0 : 0.0;
  switch (mode) {
    case InputMode::Image:
      return image;
    case InputMode::Anatomy:
      return Tensor(Shape{1, anatomy.height, anatomy.width}, std::move(mask_plane));
    case InputMode::Combined: {
      std::vector<double> d(image.values());
      d.insert(d.end(), mask_plane.begin(), mask_plane.end());
      return Tensor(Shape{4, anatomy.height, anatomy.width}, std::move(d));
    }
  }
  throw UsageError("compose_input: unknown mode");
}

/// Samples (x, p(x)) from x_min to x_max every `step`; x_max is always included.
inline std::vector<Point> curve_to_pointset(const PolynomialCurve& curve, double step) {
  if (!(step > 0.0)) throw UsageError("curve_to_pointset: step must be > 0");
  std::vector<Point> pts;
  const double span = curve.x_max - curve.x_min;
  const auto n = static_cast<std::size_t>(std::floor(span / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) {
    const double x = curve.x_min + static_cast<double>(i) * step;
    pts.push_back({x, curve.evaluate(x)});
  }
  if (pts.back().x < curve.x_max) pts.push_back({curve.x_max, curve.evaluate(curve.x_max)});
  return pts;
}

// ---------------------------------------------------------------------------
// End-to-end landmark pipeline

struct FitResult {
  double angle = 0.0;
  Point center;
  std::vector<Point> corrected_boundary;
  Point corrected_apex;
  PolynomialCurve curve;  // in the corrected frame
};

/// Rotates the landmarks about `center` so the canal is vertical and fits the
/// boundary. Without a canal axis the angle is zero.
inline FitResult fit_landmarks(const LandmarkSet& lm, std::size_t degree, const Point& center) {
  lm.validate();
  FitResult r;
  r.angle = lm.canal_axis ? rotation_angle(*lm.canal_axis) : 0.0;
  r.center = center;
  r.corrected_boundary = rotate_points(lm.boundary, r.angle, center);
  r.corrected_apex = rotate_point(lm.gutta_apex, r.angle, center);
  for (std::size_t i = 1; i < r.corrected_boundary.size(); ++i) {
    if (!(r.corrected_boundary[i].x > r.corrected_boundary[i - 1].x)) {
      throw UsageError("boundary landmarks must run strictly left to right after rotation correction (points " +
                       std::to_string(i) + " and " + std::to_string(i + 1) + ")");
    }
  }
  r.curve = fit_polynomial(r.corrected_boundary, degree);
  return r;
}

}  // namespace agmb
