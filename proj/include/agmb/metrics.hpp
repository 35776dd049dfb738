#pragma once

// Classification metrics (one-vs-rest, macro averaged), ROC AUC, the surface
// distances ASD and HD95, and the one-tailed paired t-test.

#include <agmb/hs_pcl.hpp>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace agmb {

// ---------------------------------------------------------------------------
// Classification

struct ClassCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
};

struct ConfusionMatrix {
  std::size_t classes = 0;
  std::size_t samples = 0;
  std::size_t correct = 0;
  std::vector<ClassCounts> per_class;

  static ConfusionMatrix build(const std::vector<int>& y_true, const std::vector<int>& y_pred, std::size_t K) {
    if (y_true.empty()) throw UsageError("classification metrics need at least one sample");
    if (y_true.size() != y_pred.size()) {
      throw UsageError("label lists differ in length: " + std::to_string(y_true.size()) + " vs " +
                       std::to_string(y_pred.size()));
    }
    if (K < 2) throw UsageError("need at least two classes");
    ConfusionMatrix cm{K, y_true.size(), 0, std::vector<ClassCounts>(K)};
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const int t = y_true[i], p = y_pred[i];
      if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= K || static_cast<std::size_t>(p) >= K) {
        throw UsageError("label out of range 0.." + std::to_string(K - 1) + " at sample " + std::to_string(i));
      }
      if (t == p) ++cm.correct;
      for (std::size_t c = 0; c < K; ++c) {
        const bool is_t = static_cast<std::size_t>(t) == c, is_p = static_cast<std::size_t>(p) == c;
        auto& cc = cm.per_class[c];
        if (is_t && is_p) ++cc.tp;
        else if (!is_t && !is_p) ++cc.tn;
        else if (is_p) ++cc.fp;
        else ++cc.fn;
      }
    }
    return cm;
  }
};

struct ClassificationMetrics {
  double acc = 0.0, sen = 0.0, spc = 0.0, f1 = 0.0;
  std::vector<double> class_acc, class_sen, class_spc, class_f1;
  std::vector<std::string> warnings;
};

/// One-vs-rest metrics per class, then the unweighted mean over classes. A
/// metric whose denominator is zero for a class counts as 0 for that class
/// and adds a warning.
inline ClassificationMetrics classification_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                                    std::size_t K) {
  const auto cm = ConfusionMatrix::build(y_true, y_pred, K);
  ClassificationMetrics m;
  auto ratio = [&m](double num, double den, const char* metric, std::size_t cls) {
    if (den == 0.0) {
      m.warnings.push_back(std::string(metric) + " undefined for class " + std::to_string(cls) + " (zero denominator), using 0");
      return 0.0;
    }
    return num / den;
  };
  for (std::size_t c = 0; c < K; ++c) {
    const auto& k = cm.per_class[c];
    const double tp = static_cast<double>(k.tp), tn = static_cast<double>(k.tn);
    const double fp = static_cast<double>(k.fp), fn = static_cast<double>(k.fn);
    m.class_acc.push_back(ratio(tp + tn, tp + tn + fp + fn, "ACC", c));
    m.class_sen.push_back(ratio(tp, tp + fn, "SEN", c));
    m.class_spc.push_back(ratio(tn, tn + fp, "SPC", c));
    m.class_f1.push_back(ratio(2 * tp, 2 * tp + fp + fn, "F1", c));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  m.acc = mean(m.class_acc);
  m.sen = mean(m.class_sen);
  m.spc = mean(m.class_spc);
  m.f1 = mean(m.class_f1);
  return m;
}

// ---------------------------------------------------------------------------
// ROC AUC

/// Area under the ROC curve by the trapezoidal rule over every distinct
/// threshold. Tied scores contribute a diagonal segment, which makes the
/// result equal to the Mann-Whitney statistic. Area is accumulated in
/// integer units so both formulations agree bit for bit.
/// Returns nullopt when one of the two classes is absent.
inline std::optional<double> binary_auc(const std::vector<bool>& positive, const std::vector<double>& scores) {
  if (positive.size() != scores.size()) throw UsageError("binary_auc: label and score counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0, fp = 0, area2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0, dfp = 0;
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) (positive[order[j]] ? dtp : dfp) += 1;
    area2 += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  if (tp == 0 || fp == 0) return std::nullopt;
  return area2 / (2.0 * tp * fp);
}

struct AucResult {
  double macro = 0.5;
  std::vector<double> per_class;
  std::vector<std::string> warnings;
};

/// Macro one-vs-rest AUC. scores[i][c] is sample i's score for class c.
/// Classes without positives or negatives contribute 0.5 and a warning.
inline AucResult roc_auc(const std::vector<int>& y_true, const std::vector<std::vector<double>>& scores, std::size_t K) {
  if (y_true.empty()) throw UsageError("roc_auc: no samples");
  if (scores.size() != y_true.size()) throw UsageError("roc_auc: label and score counts differ");
  AucResult r;
  double sum = 0.0;
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<bool> pos(y_true.size());
    std::vector<double> s(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      if (scores[i].size() != K) throw UsageError("roc_auc: sample " + std::to_string(i) + " has wrong score count");
      pos[i] = y_true[i] == static_cast<int>(c);
      s[i] = scores[i][c];
    }
    const auto a = binary_auc(pos, s);
    if (!a) r.warnings.push_back("AUC undefined for class " + std::to_string(c) + " (single-class truth), using 0.5");
    r.per_class.push_back(a.value_or(0.5));
    sum += r.per_class.back();
  }
  r.macro = sum / static_cast<double>(K);
  return r;
}

// ---------------------------------------------------------------------------
// Surface distances

struct SurfacePointSet {
  std::vector<Point> points;
  double spacing = 1.0;  // mm per pixel

  void validate() const {
    if (points.empty()) throw UsageError("surface point set is empty");
    if (!(spacing > 0.0)) throw UsageError("surface spacing must be > 0");
  }
};

namespace detail {

inline void check_pair(const SurfacePointSet& a, const SurfacePointSet& b) {
  a.validate();
  b.validate();
  if (a.spacing != b.spacing) {
    throw UsageError("surface point sets have different spacing (" + std::to_string(a.spacing) + " vs " +
                     std::to_string(b.spacing) + ")");
  }
}

}  // namespace detail

/// For every point of `from`, the distance (in mm) to the nearest point of `to`.
inline std::vector<double> directed_distances(const SurfacePointSet& from, const SurfacePointSet& to) {
  std::vector<double> d;
  d.reserve(from.points.size());
  for (const auto& p : from.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to.points) {
      const double dx = p.x - q.x, dy = p.y - q.y;
      best = std::min(best, dx * dx + dy * dy);
    }
    d.push_back(std::sqrt(best) * from.spacing);
  }
  return d;
}

/// Linear interpolation between order statistics (type 7). q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("percentile of an empty list");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Average symmetric surface distance.
inline double asd(const SurfacePointSet& seg, const SurfacePointSet& gt) {
  detail::check_pair(seg, gt);
  double total = 0.0;
  for (double d : directed_distances(seg, gt)) total += d;
  for (double d : directed_distances(gt, seg)) total += d;
  return total / static_cast<double>(seg.points.size() + gt.points.size());
}

/// Bidirectional Hausdorff distance with each directed supremum replaced by
/// its 95th percentile; the larger direction is reported.
inline double hd95(const SurfacePointSet& seg, const SurfacePointSet& gt) {
  detail::check_pair(seg, gt);
  return std::max(percentile(directed_distances(seg, gt), 0.95), percentile(directed_distances(gt, seg), 0.95));
}

inline double hausdorff(const SurfacePointSet& seg, const SurfacePointSet& gt) {
  detail::check_pair(seg, gt);
  const auto a = directed_distances(seg, gt), b = directed_distances(gt, seg);
  return std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
}

// ---------------------------------------------------------------------------
// Paired t-test

struct TTestResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

/// One-tailed paired t-test of H1: mean(a - b) > 0. t = mean(d) / (s / sqrt(n))
/// on the paired differences d, p = P(T_{n-1} > t).
inline TTestResult paired_t_test_one_tail(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired t-test: samples differ in length");
  if (a.size() < 2) throw UsageError("paired t-test: need at least two pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw DegenerateInputError("paired t-test: paired differences have zero variance");
  TTestResult r;
  r.t = mean / (sd / std::sqrt(n));
  r.dof = n - 1.0;
  const boost::math::students_t dist(r.dof);
  r.p = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace agmb
