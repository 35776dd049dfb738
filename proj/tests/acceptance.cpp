// Acceptance run: one line per criterion, nonzero exit if any fails.

#include <agmb/agmb.hpp>
#include <agmb/golden.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"

using namespace agmb;
namespace fs = std::filesystem;

namespace {

// Collects the first failed check of a criterion.
struct Check {
  bool ok = true;
  std::string detail;

  void operator()(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<std::string(Check&)> body;  // returns a short summary
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

// ---------------------------------------------------------------------------

std::string mhsa_cost_reference(Check& check) {
  const auto sizes = spatial_sweep_sizes();
  const auto& ref = reference_spatial_mhsa_gflops();
  check(sizes.size() == 8 && ref.size() == 8, "expected 8 reference sizes");
  double worst = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double g = static_cast<double>(flops_mhsa(sizes[i].channels, sizes[i].height, sizes[i].width)) / 1e9;
    const double rel = std::abs(g - ref[i]) / ref[i];
    worst = std::max(worst, rel);
    check(rel <= 0.05, std::to_string(sizes[i].height) + "x" + std::to_string(sizes[i].width) + ": " +
                           fmt("%.4fG", g) + " vs " + fmt("%.4fG", ref[i]));
  }
  return "worst deviation " + fmt("%.2f%%", 100 * worst);
}

std::string gmhsa_cost_consistency(Check& check) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const std::uint64_t C = 1 + rng() % 64, H = 1 + rng() % 48, W = 1 + rng() % 48;
    check(flops_gmhsa_units(C, H, W, H, W, 1) == flops_mhsa(C, H, W), "reduction fails at C=" + std::to_string(C));
  }
  int counted = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t heads = 1 + rng() % 3, phi = 1 + rng() % 4;
    const std::size_t C = phi * heads * (1 + rng() % 3), h = 1 + rng() % 5, w = 1 + rng() % 5;
    const AttentionConfig cfg{C, h, w, h, w, heads, phi};
    const auto p = GmhsaParams::init(cfg, rng);
    const auto tile = Tensor::uniform({C / phi, h, w}, rng, -1, 1);
    const auto got = count_ops_instrumented([&] { unit_attention(tile, p, heads); });
    check(got == flops_gmhsa_per_unit(C, h, w, phi), "instrumented count differs at C=" + std::to_string(C));
    ++counted;
  }
  const AttentionConfig block{16, 8, 12, 4, 3, 2, 4};
  const auto bp = GmhsaParams::init(block, rng);
  const auto x = Tensor::uniform({16, 8, 12}, rng, -1, 1);
  check(count_ops_instrumented([&] { gmhsa_forward(x, block, bp); }) == flops_gmhsa_total(16, 8, 12, 4, 3, 4),
        "instrumented whole-block count differs");
  return "20 reduction sizes, " + std::to_string(counted) + " instrumented units exact";
}

std::string channel_trend(Check& check) {
  const auto rows = sweep(channel_sweep_sizes(), {AttentionVariant::GMHSA});
  std::string ratios;
  double prev = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double r = static_cast<double>(rows[i].flops) / static_cast<double>(rows[i - 1].flops);
    check(r > prev, "ratios not strictly increasing at C=" + std::to_string(rows[i].channels));
    check(r < 4.0, "ratio reaches 4");
    ratios += (i > 1 ? " " : "") + fmt("%.3f", r);
    prev = r;
  }
  check(prev >= 3.5, "final ratio " + fmt("%.3f", prev) + " < 3.5");
  return "ratios " + ratios;
}

std::string polynomial_fit(Check& check) {
  const auto exact = fit_landmarks(synth::exact_unit_parabola(), 2, {0, 0}).curve.coefficients;
  check(std::abs(exact[0] - 1) <= 1e-9 && std::abs(exact[1]) <= 1e-9 && std::abs(exact[2]) <= 1e-9,
        "exact parabola not recovered");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst_normal = 0.0, worst_oracle = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<Point> pts;
    for (int i = 0; i < 19; ++i) pts.push_back({i - 9.0 + 0.3 * u(rng), 2.0 * u(rng) + 0.1 * i * i});
    const auto c = fit_polynomial(pts, 2).coefficients;
    for (int k = 0; k <= 2; ++k) {
      double s = 0.0, scale = 0.0;
      for (const auto& p : pts) {
        const double r = p.y - (c[0] * p.x * p.x + c[1] * p.x + c[2]);
        s += r * std::pow(p.x, k);
        scale += std::abs(p.y * std::pow(p.x, k));
      }
      worst_normal = std::max(worst_normal, std::abs(s) / std::max(1.0, scale));
    }
  }
  check(worst_normal <= 1e-8, "normal equations residual " + fmt("%.2e", worst_normal));
  for (std::size_t degree = 2; degree <= 5; ++degree) {
    for (int t = 0; t < 10; ++t) {
      std::vector<double> xs, ys;
      std::vector<Point> pts;
      for (std::size_t i = 0; i < 19; ++i) {
        const double x = 40.0 + 9.0 * static_cast<double>(i) + 3 * u(rng);
        const double y = 120.0 + 0.01 * (x - 128) * (x - 128) + 6 * u(rng);
        xs.push_back(x);
        ys.push_back(y);
        pts.push_back({x, y});
      }
      const auto fit = fit_polynomial(pts, degree);
      const auto ref = oracle::polyfit_pinv(xs, ys, degree);
      for (std::size_t k = 0; k <= degree; ++k) {
        const double rel = std::abs(fit.coefficients[k] - ref[k]) / std::max(1.0, std::abs(ref[k]));
        worst_oracle = std::max(worst_oracle, rel);
      }
    }
  }
  check(worst_oracle <= 1e-6, "pseudo-inverse deviation " + fmt("%.2e", worst_oracle));
  return "normal-eq " + fmt("%.1e", worst_normal) + ", oracle " + fmt("%.1e", worst_oracle);
}

std::string degree_sweep_shape(Check& check) {
  const auto rows = synth::degree_sweep({2, 3, 4, 5}, {});
  std::string s;
  for (const auto& r : rows) {
    s += (s.empty() ? "" : ", ") + ("d" + std::to_string(r.degree) + " ASD " + fmt("%.4f", r.mean_asd));
    check(r.asd.size() == 100 && r.hd95.size() == 100, "sweep did not cover 100 cases");
    check(r.mean_asd >= rows[0].mean_asd, "degree " + std::to_string(r.degree) + " beats degree 2 on mean ASD");
  }
  return s + " mm";
}

std::string surface_oracles(Check& check) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 200), a(-3, 3);
  auto points = [&](std::size_t n) {
    std::vector<oracle::P2> v(n);
    for (auto& p : v) p = {u(rng), u(rng)};
    return v;
  };
  auto as_set = [](const std::vector<oracle::P2>& v) {
    SurfacePointSet s{{}, 0.1};
    for (const auto& p : v) s.points.push_back({p.x, p.y});
    return s;
  };
  double worst = 0.0, worst_rigid = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto pa = points(30), pb = points(30);
    const auto sa = as_set(pa), sb = as_set(pb);
    worst = std::max({worst, std::abs(asd(sa, sb) - oracle::asd(pa, pb, 0.1)),
                      std::abs(hd95(sa, sb) - oracle::hd95(pa, pb, 0.1))});
    check(asd(sa, sa) == 0.0 && hd95(sa, sa) == 0.0, "identical sets not at zero distance");
    const double angle = a(rng);
    const Point center{a(rng) * 30, a(rng) * 30};
    auto move = [&](SurfacePointSet s) {
      s.points = rotate_points(s.points, angle, center);
      for (auto& p : s.points) p.x += 17.0;
      return s;
    };
    worst_rigid = std::max({worst_rigid, std::abs(asd(move(sa), move(sb)) - asd(sa, sb)),
                            std::abs(hd95(move(sa), move(sb)) - hd95(sa, sb))});
  }
  check(worst <= 1e-12, "oracle deviation " + fmt("%.2e", worst));
  check(worst_rigid <= 1e-9, "rigid-motion deviation " + fmt("%.2e", worst_rigid));
  return "oracle " + fmt("%.1e", worst) + ", rigid " + fmt("%.1e", worst_rigid);
}

std::string attention_correctness(Check& check) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (std::size_t heads : {1u, 2u, 4u}) {
    const AttentionConfig cfg{8, 3, 2, 3, 2, heads, 1};
    const auto p = GmhsaParams::init(cfg, rng, 0.7);
    const auto x = Tensor::uniform({8, 3, 2}, rng, -2, 2);
    const auto r = oracle::position_matrix(p.rel_h.values(), p.rel_w.values(), 3, 2, 8 / heads);
    const auto want = oracle::attention_dense(x.values(), 8, 6, p.wq.values(), p.wk.values(), p.wv.values(),
                                              p.wo.values(), r, heads);
    const auto got = unit_attention(x, p, heads);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  check(worst <= 1e-10, "unit attention deviates " + fmt("%.2e", worst));

  for (int t = 0; t < 10; ++t) {
    const auto x = Tensor::uniform({3, 8, 12}, rng, -5, 5);
    check(merge(group(x, 4, 3), 3, 8, 12) == x, "merge(group(x)) != x");
  }

  const AttentionConfig tiled{8, 8, 8, 2, 4, 2, 2};
  const auto tp = GmhsaParams::init(tiled, rng, 0.5);
  const auto tx = Tensor::uniform({8, 8, 8}, rng, -2, 2);
  const auto base = gmhsa_forward(tx, tiled, tp);
  std::vector<std::size_t> order(tiled.tile_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int t = 0; t < 5; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    ad::GmhsaOptions opt;
    opt.tile_order = order;
    check(gmhsa_forward(tx, tiled, tp, opt) == base, "tile order changes the output");
  }

  const AttentionConfig whole{8, 4, 4, 4, 4, 2, 1};
  auto wp = GmhsaParams::init(whole, rng, 0.5);
  wp.reduce_w = eye(8);
  wp.expand_w = eye(8);
  const auto wx = Tensor::uniform({8, 4, 4}, rng, -2, 2);
  const auto r = oracle::position_matrix(wp.rel_h.values(), wp.rel_w.values(), 4, 4, 4);
  const auto want = oracle::attention_dense(wx.values(), 8, 16, wp.wq.values(), wp.wk.values(), wp.wv.values(),
                                            wp.wo.values(), r, 2);
  const auto got = gmhsa_forward(wx, whole, wp);
  double worst_whole = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) worst_whole = std::max(worst_whole, std::abs(got[i] - want[i]));
  check(worst_whole <= 1e-10, "whole-map GMHSA deviates " + fmt("%.2e", worst_whole));
  return "unit " + fmt("%.1e", worst) + ", whole-map " + fmt("%.1e", worst_whole);
}

std::string gradient_checks(Check& check) {
  std::string s;
  for (const auto& scope : gradcheck_suites::scopes()) {
    const auto r = gradcheck_suites::run(scope);
    check(r.passed, scope + ": " + r.worst_name + " " + fmt("%.2e", r.worst));
    s += (s.empty() ? "" : ", ") + scope + " " + fmt("%.1e", r.worst);
  }
  return s;
}

std::string fusion_contract(Check& check) {
  std::mt19937_64 rng(9);
  const FusionConfig full;
  check(full.total_channels == 4096 && full.blocks == 64, "default fusion config is not 4096 / 64");
  const auto p = FusionParams::init(full, rng);
  const auto bs = block_scores(Tensor::uniform({4096}, rng, 0, 1), p, full);
  check(bs.kept.size() == 32, "kept " + std::to_string(bs.kept.size()) + " blocks");
  check(kept_channels(bs.kept, full.block_channels()).size() == 2048, "kept channel count is not 2048");
  {
    // Fused output width on a small map.
    Graph g;
    const auto v = agmb::bind(g, p);
    Var y = ad::fuse(g.constant(Tensor::uniform({2048, 1, 1}, rng, 0, 1)),
                     g.constant(Tensor::uniform({2048, 1, 1}, rng, 0, 1)), full, v);
    check(g.value(y).dim(0) == 2048, "fused output has " + std::to_string(g.value(y).dim(0)) + " channels");
  }

  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(64), m(64);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u(rng);
      m[i] = std::exp(3 * s[i]) - 7;
    }
    std::vector<std::size_t> idx(64);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    idx.resize(32);
    std::sort(idx.begin(), idx.end());
    check(top_half(s) == idx, "kept set differs from full-sort oracle");
    check(top_half(s) == top_half(m), "monotone transform changes the kept set");
  }

  const auto small = FusionConfig::scaled(16, 4);
  const auto sp = FusionParams::init(small, rng, 0.5);
  auto local = Tensor::uniform({8, 4, 4}, rng, -1, 1), global = Tensor::uniform({8, 4, 4}, rng, -1, 1);
  ad::FuseOptions opt;
  opt.frozen_descriptor = Tensor::uniform({16}, rng, 0, 1);
  BranchScores kept;
  opt.scores_out = &kept;
  const Tensor before = fuse(local, global, small, sp, opt);
  for (std::size_t b = 0; b < 4; ++b) {
    if (std::find(kept.kept.begin(), kept.kept.end(), b) != kept.kept.end()) continue;
    Tensor& target = b < 2 ? local : global;
    for (std::size_t c = (b % 2) * 4; c < (b % 2) * 4 + 4; ++c)
      for (std::size_t i = 0; i < 16; ++i) target[c * 16 + i] += 100.0;
  }
  check(fuse(local, global, small, sp, opt) == before, "discarded blocks influence the output");
  return "32 of 64 blocks, 2048 channels, 100 score vectors";
}

std::string metric_oracles(Check& check) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const std::size_t K = 2 + rng() % 4, n = 5 + rng() % 40;
    std::vector<int> yt(n), yp(n);
    for (std::size_t i = 0; i < n; ++i) {
      yt[i] = static_cast<int>(rng() % K);
      yp[i] = static_cast<int>(rng() % K);
    }
    const auto m = classification_metrics(yt, yp, K);
    const auto o = oracle::macro_from_confusion(yt, yp, K);
    check(m.acc == o.acc && m.sen == o.sen && m.spc == o.spc && m.f1 == o.f1, "macro metrics differ from oracle");
  }
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 4 + rng() % 60;
    std::vector<bool> pos(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = i < 2 ? i == 0 : rng() % 2 == 0;
      s[i] = static_cast<double>(rng() % 10) / 10.0;
    }
    check(binary_auc(pos, s).value() == oracle::mann_whitney_auc(pos, s), "AUC differs from pair counting");
  }
  std::normal_distribution<double> nd(0, 1);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t size = 5 + rng() % 40;
    std::vector<double> a(size), b(size);
    for (std::size_t i = 0; i < size; ++i) {
      b[i] = nd(rng);
      a[i] = b[i] + 0.3 + nd(rng);
    }
    const auto r = paired_t_test_one_tail(a, b);
    worst = std::max(worst, std::abs(r.p - oracle::t_upper_tail(r.t, r.dof)));
  }
  check(worst <= 1e-6, "t-test p deviates " + fmt("%.2e", worst));
  return "t-test p deviation " + fmt("%.1e", worst);
}

// Runs the CLI binary, returning stdout; the exit status goes to `status`.
std::string run_cli(const std::string& args, int& status) {
  const std::string cmd = std::string("\"") + AGMB_CLI_PATH + "\" " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw UsageError("cannot run " + cmd);
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  status = pclose(pipe);
  return out;
}

std::string cli_determinism(Check& check) {
  const fs::path dir = fs::temp_directory_path() / "agmb_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string lm = (dir / "landmarks.csv").string(), pred = (dir / "pred.csv").string();
  int status = 0;
  run_cli("gen landmarks --seed 42 --out \"" + lm + "\"", status);
  check(status == 0, "gen landmarks failed");
  run_cli("gen predictions --seed 42 --out \"" + pred + "\"", status);
  check(status == 0, "gen predictions failed");
  const std::vector<std::string> commands{"demo --golden", "fit \"" + lm + "\"", "cost --paper-rows vii",
                                          "cost --paper-rows viii", "eval \"" + pred + "\""};
  for (const auto& c : commands) {
    int s1 = 0, s2 = 0;
    const auto a = run_cli(c, s1), b = run_cli(c, s2);
    check(s1 == 0 && s2 == 0, "'" + c + "' exited nonzero");
    check(!a.empty() && a == b, "'" + c + "' output differs between runs");
  }
  fs::remove_all(dir);
  return std::to_string(commands.size()) + " commands byte-identical";
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "MHSA cost within 5% of reference", 1, mhsa_cost_reference},
      {2, "GMHSA cost reduction and instrumented count", 10, gmhsa_cost_consistency},
      {3, "GMHSA channel ratio trend", 1, channel_trend},
      {4, "polynomial fitting", 5, polynomial_fit},
      {5, "degree sweep favours degree 2", 60, degree_sweep_shape},
      {6, "ASD / HD95 oracle equivalence", 10, surface_oracles},
      {7, "GMHSA correctness", 10, attention_correctness},
      {8, "finite-difference gradient checks", 300, gradient_checks},
      {9, "branch fusion contract", 10, fusion_contract},
      {10, "classification metrics and t-test", 10, metric_oracles},
      {11, "CLI determinism", 30, cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Check check;
    std::string summary;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      summary = c.body(check);
    } catch (const std::exception& e) {
      check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check(secs <= c.limit_seconds, "took " + fmt("%.2f", secs) + " s, limit " + fmt("%.0f", c.limit_seconds) + " s");
    if (!check.ok) ++failed;
    std::printf("[%s] criterion %d: %s (%.2f s) -- %s\n", check.ok ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                check.ok ? summary.c_str() : check.detail.c_str());
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
