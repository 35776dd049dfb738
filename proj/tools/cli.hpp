#pragma once

// The agmb command-line tool. run() parses argv, executes one subcommand and
// returns the process exit status:
//   0  success
//   1  usage, parse or validation error
//   2  numeric failure (rank deficiency, degenerate statistics, failed
//      gradient check, golden mismatch)

#include <agmb/agmb.hpp>
#include <agmb/golden.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace agmb::cli {

namespace detail {

inline std::string num(double v) { return io::detail::num(v); }

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::vector<std::size_t> parse_dims(const std::string& s, std::size_t count, const std::string& flag) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (true) {
    const auto x = s.find('x', start);
    const std::string part = s.substr(start, x == std::string::npos ? std::string::npos : x - start);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size() || v == 0 || part.front() == '-') {
      throw UsageError(flag + ": '" + s + "' is not a list of positive integers separated by 'x'");
    }
    out.push_back(static_cast<std::size_t>(v));
    if (x == std::string::npos) break;
    start = x + 1;
  }
  if (out.size() != count) throw UsageError(flag + ": expected " + std::to_string(count) + " extents in '" + s + "'");
  return out;
}

inline void write_file(const std::string& path, const std::string& content) {
  auto out = io::detail::open_out(path, std::ios::out | std::ios::binary);
  out << content;
  if (!out) throw UsageError("failed writing '" + path + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string landmarks;
  std::size_t delta = 2;
  std::string mask_out, curve_out, points_out;
  std::string size = "256x256";
  double step = 0.5;
};

inline int cmd_fit(const FitArgs& a, std::ostream& out) {
  const auto dims = detail::parse_dims(a.size, 2, "--size");
  if (a.delta < 1) throw UsageError("--delta must be >= 1");
  const LandmarkSet lm = io::read_landmarks(a.landmarks);
  const Point center = synth::image_center(dims[0], dims[1]);
  const FitResult r = fit_landmarks(lm, a.delta, center);

  out << "landmarks: " << lm.boundary.size() << " boundary, apex, canal axis " << (lm.canal_axis ? "yes" : "no")
      << '\n';
  out << "rotation angle: " << detail::num(r.angle) << " rad about (" << detail::num(center.x) << ", "
      << detail::num(center.y) << ")\n";
  out << "degree: " << r.curve.degree << '\n';
  out << "coefficients (highest power first):";
  for (double c : r.curve.coefficients) out << ' ' << detail::num(c);
  out << '\n';
  if (a.delta == 2) {
    out << "a = " << detail::num(r.curve.coefficients[0]) << ", b = " << detail::num(r.curve.coefficients[1])
        << ", c = " << detail::num(r.curve.coefficients[2]) << '\n';
  }
  out << "domain: [" << detail::num(r.curve.x_min) << ", " << detail::num(r.curve.x_max) << "]\n";
  out << "residual sum of squares: " << detail::num(residual_sum_squares(r.corrected_boundary, r.curve.coefficients))
      << '\n';

  if (!a.curve_out.empty()) {
    detail::write_file(a.curve_out, io::curve_json(r.curve, r.angle).dump(2) + "\n");
    out << "wrote curve: " << a.curve_out << '\n';
  }
  if (!a.mask_out.empty()) {
    std::ostringstream pgm;
    io::write_pgm(pgm, anatomy_feature(r.curve, r.corrected_apex, dims[0], dims[1]));
    detail::write_file(a.mask_out, pgm.str());
    out << "wrote mask: " << a.mask_out << " (" << dims[0] << "x" << dims[1] << ", rotation-corrected frame)\n";
  }
  if (!a.points_out.empty()) {
    // Sampled in the corrected frame, written back in the input frame.
    std::ostringstream pts;
    io::write_points(pts, rotate_points(curve_to_pointset(r.curve, a.step), -r.angle, center));
    detail::write_file(a.points_out, pts.str());
    out << "wrote curve points: " << a.points_out << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// cost

struct CostArgs {
  std::string paper_rows;
  std::vector<std::string> sizes;  // CxHxW
  std::string unit = "8x8";
  std::size_t phi = 4;
  std::size_t heads = 4;
  std::string csv;
};

inline int cmd_cost(const CostArgs& a, std::ostream& out) {
  SweepOptions opt;
  const auto u = detail::parse_dims(a.unit, 2, "--unit");
  opt.unit_h = u[0];
  opt.unit_w = u[1];
  opt.phi = a.phi;
  opt.heads = a.heads;
  std::vector<FeatureSize> sizes;
  if (!a.paper_rows.empty() && !a.sizes.empty()) throw UsageError("use either --paper-rows or --size, not both");
  if (a.paper_rows == "vii" || (a.paper_rows.empty() && a.sizes.empty())) {
    sizes = spatial_sweep_sizes();
  } else if (a.paper_rows == "viii") {
    sizes = channel_sweep_sizes();
  } else if (!a.paper_rows.empty()) {
    throw UsageError("--paper-rows must be vii or viii, got '" + a.paper_rows + "'");
  }
  for (const auto& s : a.sizes) {
    const auto d = detail::parse_dims(s, 3, "--size");
    sizes.push_back({d[0], d[1], d[2]});
  }
  const auto rows = sweep(sizes, {AttentionVariant::MHSA, AttentionVariant::GMHSA}, opt);
  out << format_cost_table(rows);
  if (a.paper_rows == "viii") {
    out << "GMHSA FLOPs ratio between consecutive channel widths:\n";
    const CostReport* prev = nullptr;
    for (const auto& r : rows) {
      if (r.variant != AttentionVariant::GMHSA) continue;
      if (prev) {
        out << "  C=" << prev->channels << " -> C=" << r.channels << ": "
            << detail::fixed(static_cast<double>(r.flops) / static_cast<double>(prev->flops), 4) << '\n';
      }
      prev = &r;
    }
  }
  if (!a.csv.empty()) {
    detail::write_file(a.csv, format_cost_csv(rows));
    out << "wrote csv: " << a.csv << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// demo

struct DemoArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string ablate;
  std::optional<std::size_t> theta, phi;
  bool golden = false;
  std::string params_out;
};

inline ModelVariant variant_from_ablate(const std::string& s) {
  if (s.empty()) return ModelVariant::Full;
  if (s == "local") return ModelVariant::GlobalOnly;
  if (s == "global") return ModelVariant::LocalOnly;
  if (s == "fusion") return ModelVariant::NoFusion;
  throw UsageError("--ablate must be local, global or fusion, got '" + s + "'");
}

inline int cmd_demo(const DemoArgs& a, std::ostream& out) {
  ModelConfig cfg;
  std::uint64_t seed = golden::kDemoSeed;
  bool default_config = true;
  if (!a.config.empty()) {
    const auto j = io::read_json(a.config);
    cfg = io::model_config_from_json(j);
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    default_config = io::to_json(cfg) == io::to_json(ModelConfig{});
  }
  if (a.seed) seed = *a.seed;
  if (a.theta) cfg.theta = *a.theta;
  if (a.phi) cfg.phi = *a.phi;
  if (a.theta || a.phi) default_config = io::to_json(cfg) == io::to_json(ModelConfig{});
  cfg.validate();
  const ModelVariant variant = variant_from_ablate(a.ablate);
  if (a.golden && (!default_config || seed != golden::kDemoSeed)) {
    throw UsageError("--golden checksums exist only for the default config with seed 42");
  }

  const ModelParams params = ModelParams::init(cfg, variant, seed);
  const Tensor input(cfg.input_shape(), 1.0);
  ShapeTrace trace;
  const Tensor scores = forward_classify(input, cfg, variant, params, &trace);

  out << "variant: " << variant_name(variant) << '\n';
  out << "seed: " << seed << '\n';
  out << "parameters: " << params.scalar_count() << '\n';
  for (const auto& [name, shape] : trace) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "  %-28s %s\n", name.c_str(), shape_str(shape).c_str());
    out << buf;
  }
  out << "scores: [";
  for (std::size_t i = 0; i < scores.size(); ++i) out << (i ? ", " : "") << detail::num(scores[i]);
  out << "]\n";
  const std::uint64_t sum = score_checksum(scores);
  out << "checksum: " << detail::hex(sum) << '\n';

  if (!a.params_out.empty()) {
    std::ostringstream bin;
    io::write_params(bin, params);
    detail::write_file(a.params_out, bin.str());
    out << "wrote parameters: " << a.params_out << '\n';
  }
  if (a.golden) {
    const std::uint64_t expect = golden::demo_checksum(variant);
    if (sum != expect) {
      out << "golden: MISMATCH (expected " << detail::hex(expect) << ")\n";
      return 2;
    }
    out << "golden: ok\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string scope;
  std::uint64_t seed = 42;
  std::string corrupt;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions opt;
  opt.corrupt = a.corrupt;
  const auto r = gradcheck_suites::run(a.scope, opt, a.seed);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-34s %8s %12s  %s\n", "parameter group", "checked", "rel_error", "result");
  out << buf;
  for (const auto& g : r.groups) {
    std::snprintf(buf, sizeof buf, "%-34s %8zu %12.3e  %s\n", g.name.c_str(), g.checked, g.rel_error,
                  g.passed ? "ok" : "FAIL");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%s: worst %s = %.3e (tolerance %.0e)\n", r.passed ? "PASS" : "FAIL",
                r.worst_name.c_str(), r.worst, opt.tolerance);
  out << buf;
  return r.passed ? 0 : 2;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> files;
  std::string mode = "classification";
  std::string compare;
  double spacing = 0.1;
  std::string csv;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  std::ostringstream csv;
  if (a.mode == "segmentation") {
    if (a.files.size() != 2) throw UsageError("segmentation mode needs two point-set files (segmented, reference)");
    const SurfacePointSet seg{io::read_points(a.files[0]), a.spacing}, ref{io::read_points(a.files[1]), a.spacing};
    const double d = asd(seg, ref), h = hd95(seg, ref);
    out << "points: " << seg.points.size() << " vs " << ref.points.size() << ", spacing " << detail::num(a.spacing)
        << " mm/px\n";
    out << "ASD:  " << detail::fixed(d, 6) << " mm\n";
    out << "HD95: " << detail::fixed(h, 6) << " mm\n";
    csv << "metric,value\nASD," << detail::num(d) << "\nHD95," << detail::num(h) << '\n';
  } else if (a.mode == "classification") {
    if (a.files.size() != 1) throw UsageError("classification mode needs exactly one prediction file");
    const auto p = io::read_predictions(a.files[0]);
    const auto m = classification_metrics(p.y_true, p.y_pred, p.classes);
    const auto auc = roc_auc(p.y_true, p.scores, p.classes);
    for (const auto& w : m.warnings) err << "warning: " << w << '\n';
    for (const auto& w : auc.warnings) err << "warning: " << w << '\n';
    out << "samples: " << p.y_true.size() << ", classes: " << p.classes << '\n';
    out << "ACC: " << detail::fixed(m.acc, 6) << '\n';
    out << "AUC: " << detail::fixed(auc.macro, 6) << '\n';
    out << "SEN: " << detail::fixed(m.sen, 6) << '\n';
    out << "SPC: " << detail::fixed(m.spc, 6) << '\n';
    out << "F1:  " << detail::fixed(m.f1, 6) << '\n';
    csv << "metric,value\nACC," << detail::num(m.acc) << "\nAUC," << detail::num(auc.macro) << "\nSEN,"
        << detail::num(m.sen) << "\nSPC," << detail::num(m.spc) << "\nF1," << detail::num(m.f1) << '\n';
    if (!a.compare.empty()) {
      // Paired per sample: the score each file gives the true class.
      const auto q = io::read_predictions(a.compare);
      if (q.y_true != p.y_true) throw UsageError("--compare file must list the same samples with the same true labels");
      std::vector<double> sa, sb;
      for (std::size_t i = 0; i < p.y_true.size(); ++i) {
        sa.push_back(p.scores[i][static_cast<std::size_t>(p.y_true[i])]);
        sb.push_back(q.scores[i][static_cast<std::size_t>(q.y_true[i])]);
      }
      const auto t = paired_t_test_one_tail(sa, sb);
      out << "paired t-test (true-class score, H1: first > second): t = " << detail::fixed(t.t, 6)
          << ", dof = " << t.dof << ", p = " << detail::fixed(t.p, 8) << '\n';
      csv << "t," << detail::num(t.t) << "\np," << detail::num(t.p) << '\n';
    }
  } else {
    throw UsageError("--mode must be classification or segmentation, got '" + a.mode + "'");
  }
  if (!a.csv.empty()) {
    detail::write_file(a.csv, csv.str());
    out << "wrote csv: " << a.csv << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::string kind;
  std::uint64_t seed = 42;
  std::string out;
  std::string truth_out;
  std::size_t rows = 60;
  std::size_t classes = 3;
  double noise = 1.5;
  std::string size = "256x256";
  bool no_axis = false;
};

inline int cmd_gen(const GenArgs& a, std::ostream& out) {
  if (a.out.empty()) throw UsageError("gen needs --out");
  std::ostringstream body;
  if (a.kind == "landmarks") {
    const auto d = detail::parse_dims(a.size, 2, "--size");
    synth::LandmarkOptions opt;
    opt.height = d[0];
    opt.width = d[1];
    opt.noise = a.noise;
    opt.with_axis = !a.no_axis;
    const auto c = synth::noisy_parabola(a.seed, opt);
    io::write_landmarks(body, c.landmarks);
    if (!a.truth_out.empty()) {
      std::ostringstream t;
      io::write_points(t, rotate_points(curve_to_pointset(c.truth, 0.5), -c.angle, c.center));
      detail::write_file(a.truth_out, t.str());
    }
    out << "landmarks: seed " << a.seed << ", tilt " << detail::num(c.angle) << " rad, noise " << detail::num(a.noise)
        << " px\n";
  } else if (a.kind == "parabola") {
    io::write_landmarks(body, synth::exact_unit_parabola());
    out << "landmarks: y = x^2 at x = -9..9\n";
  } else if (a.kind == "predictions") {
    io::write_predictions(body, synth::random_predictions(a.seed, a.rows, a.classes));
    out << "predictions: seed " << a.seed << ", " << a.rows << " rows, " << a.classes << " classes\n";
  } else {
    throw UsageError("gen kind must be landmarks, parabola or predictions, got '" + a.kind + "'");
  }
  detail::write_file(a.out, body.str());
  out << "wrote " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"agmb: attention cost model, boundary fitting, toy classifier and metrics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "agmb 1.0.0");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit the boundary polynomial to a landmark CSV");
  f->add_option("landmarks", fit.landmarks, "Landmark CSV (19 boundary, apex, optional 2 axis points)")->required();
  f->add_option("--delta", fit.delta, "Polynomial degree")->capture_default_str();
  f->add_option("--out", fit.mask_out, "Write the anatomy mask as PGM");
  f->add_option("--curve", fit.curve_out, "Write the curve as JSON");
  f->add_option("--points", fit.points_out, "Write sampled curve points (input frame) as CSV");
  f->add_option("--size", fit.size, "Image size HxW")->capture_default_str();
  f->add_option("--step", fit.step, "Curve sampling step in px")->capture_default_str();

  CostArgs cost;
  auto* c = app.add_subcommand("cost", "FLOP and memory table for MHSA vs GMHSA");
  c->add_option("--paper-rows", cost.paper_rows, "Preset sizes: vii (C=16, 40..144) or viii (C=128..4096 at 40x40)");
  c->add_option("--size", cost.sizes, "Feature size CxHxW (repeatable)");
  c->add_option("--unit", cost.unit, "GMHSA unit HxW")->capture_default_str();
  c->add_option("--phi", cost.phi, "Bottleneck factor")->capture_default_str();
  c->add_option("--heads", cost.heads, "Attention heads (memory estimate only)")->capture_default_str();
  c->add_option("--csv", cost.csv, "Also write CSV");

  DemoArgs demo;
  auto* d = app.add_subcommand("demo", "Seeded forward pass with a layer-by-layer shape trace");
  d->add_option("--config", demo.config, "Model config JSON");
  d->add_option("--seed", demo.seed, "Parameter seed (default 42)");
  d->add_option("--ablate", demo.ablate, "Drop a component: local, global or fusion");
  d->add_option("--theta", demo.theta, "Fusion block count");
  d->add_option("--phi", demo.phi, "Attention bottleneck factor");
  d->add_flag("--golden", demo.golden, "Compare scores with the stored checksum");
  d->add_option("--params-out", demo.params_out, "Write the parameters to a binary file");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  g->add_option("scope", gc.scope, "ops, gmhsa, progressive, fusion or model")->required();
  g->add_option("--seed", gc.seed, "Probe seed")->capture_default_str();
  g->add_option("--corrupt", gc.corrupt)->group("");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Classification or segmentation metrics");
  e->add_option("files", ev.files, "Prediction CSV, or two point-set CSVs in segmentation mode")->required();
  e->add_option("--mode", ev.mode, "classification or segmentation")->capture_default_str();
  e->add_option("--compare", ev.compare, "Second prediction CSV for a one-tailed paired t-test");
  e->add_option("--spacing", ev.spacing, "Pixel spacing in mm (segmentation)")->capture_default_str();
  e->add_option("--csv", ev.csv, "Also write the metrics as CSV");

  GenArgs gen;
  auto* n = app.add_subcommand("gen", "Write seeded synthetic inputs");
  n->add_option("kind", gen.kind, "landmarks, parabola or predictions")->required();
  n->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  n->add_option("--out", gen.out, "Output file")->required();
  n->add_option("--truth", gen.truth_out, "landmarks: also write the true boundary points");
  n->add_option("--rows", gen.rows, "predictions: row count")->capture_default_str();
  n->add_option("--classes", gen.classes, "predictions: class count")->capture_default_str();
  n->add_option("--noise", gen.noise, "landmarks: y jitter in px")->capture_default_str();
  n->add_option("--size", gen.size, "landmarks: image size HxW")->capture_default_str();
  n->add_flag("--no-axis", gen.no_axis, "landmarks: omit the canal axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*f) return cmd_fit(fit, out);
    if (*c) return cmd_cost(cost, out);
    if (*d) return cmd_demo(demo, out);
    if (*g) return cmd_gradcheck(gc, out);
    if (*e) return cmd_eval(ev, out, err);
    if (*n) return cmd_gen(gen, out);
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << '\n';
    return 2;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace agmb::cli
