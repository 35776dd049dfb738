#pragma once

// Central finite-difference checks of analytic gradients.
//
// A parameter set is any type exposing
//   template <class F> void for_each(F&& f);   // f(const std::string&, Tensor&)
// whose names match the names the loss registers with Graph::parameter().

#include <agmb/autodiff.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace agmb {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Elements checked per tensor; tensors at or below this size are checked
  // exhaustively, larger ones at a seeded random subset.
  std::size_t max_elements = 24;
  std::uint64_t seed = 7;
  // Negative-control hook: perturbs the analytic gradient of this parameter
  // before comparison.
  std::string corrupt;
};

struct GradGroupResult {
  std::string name;
  std::size_t checked = 0;
  double rel_error = 0.0;
  bool passed = true;
};

struct GradCheckResult {
  std::vector<GradGroupResult> groups;
  bool passed = true;
  double worst = 0.0;
  std::string worst_name;
};

// Relative error of a gradient group: |a - n| / max(|a|, |n|) in the 2-norm
// over the checked entries. A group that is zero on both sides scores 0.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

template <class Params, class Loss>
GradCheckResult check_gradients(Params& params, Loss&& loss, const GradCheckOptions& opt = {}) {
  Gradients grads;
  {
    Graph g;
    Var root = loss(g, static_cast<const Params&>(params));
    grads = g.backward(root);
  }
  if (!opt.corrupt.empty()) {
    Tensor& t = grads.at(opt.corrupt);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 1e-2 * (1.0 + std::abs(t[i]));
  }

  auto eval = [&]() {
    Graph g;
    Var root = loss(g, static_cast<const Params&>(params));
    return g.value(root)[0];
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckResult result;
  params.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& analytic = grads.at(name);
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > opt.max_elements) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_elements);
      std::sort(idx.begin(), idx.end());
    }
    GradGroupResult grp{name, idx.size(), 0.0, true};
    std::vector<double> a, n;
    for (auto i : idx) {
      const double orig = t[i];
      t[i] = orig + opt.step;
      const double up = eval();
      t[i] = orig - opt.step;
      const double down = eval();
      t[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      a.push_back(analytic[i]);
      n.push_back(numeric);
    }
    grp.rel_error = relative_error(a, n);
    grp.passed = grp.rel_error <= opt.tolerance;
    result.passed = result.passed && grp.passed;
    if (grp.rel_error >= result.worst) {
      result.worst = grp.rel_error;
      result.worst_name = name;
    }
    result.groups.push_back(std::move(grp));
  });
  return result;
}

}  // namespace agmb
