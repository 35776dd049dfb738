#pragma once

// File formats: landmark CSV, PGM masks, curve JSON, prediction and point-set
// CSVs, model config JSON and the flat parameter file.

#include <agmb/metrics.hpp>
#include <agmb/model.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace agmb::io {

using json = nlohmann::json;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line) + ": " + what + " '" + s + "' is not a finite number", line);
  }
  return v;
}

inline int parse_int(const std::string& s, std::size_t line, const std::string& what) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) {
    throw ParseError("line " + std::to_string(line) + ": " + what + " '" + s + "' is not an integer", line);
  }
  return static_cast<int>(v);
}

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw UsageError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw UsageError("cannot open '" + path + "' for writing");
  return out;
}

/// Shortest decimal form that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Non-empty, non-comment lines with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> data_lines(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(n, t);
  }
  return out;
}

inline std::vector<Point> parse_points(std::istream& in) {
  std::vector<Point> pts;
  for (const auto& [n, text] : data_lines(in)) {
    const auto f = split(text, ',');
    if (f.size() != 2) {
      throw ParseError("line " + std::to_string(n) + ": expected 'x,y', got " + std::to_string(f.size()) + " fields", n);
    }
    pts.push_back({parse_double(f[0], n, "x"), parse_double(f[1], n, "y")});
  }
  return pts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Landmarks

/// 19 boundary points (left to right), the gutta-percha apex, and optionally
/// two canal-axis points. Lines starting with '#' are ignored.
inline LandmarkSet parse_landmarks(std::istream& in) {
  const auto pts = detail::parse_points(in);
  if (pts.size() != kBoundaryLandmarks + 1 && pts.size() != kBoundaryLandmarks + 3) {
    const std::size_t boundary = pts.empty() ? 0 : std::min(pts.size() - 1, kBoundaryLandmarks);
    throw UsageError("landmark file has " + std::to_string(pts.size()) + " points (" + std::to_string(boundary) +
                     " boundary); expected 20 (19 boundary + apex) or 22 (plus 2 canal-axis points)");
  }
  LandmarkSet lm;
  lm.boundary.assign(pts.begin(), pts.begin() + kBoundaryLandmarks);
  lm.gutta_apex = pts[kBoundaryLandmarks];
  if (pts.size() == kBoundaryLandmarks + 3) lm.canal_axis = {pts[kBoundaryLandmarks + 1], pts[kBoundaryLandmarks + 2]};
  lm.validate();
  return lm;
}

inline LandmarkSet read_landmarks(const std::string& path) {
  auto in = detail::open_in(path);
  return parse_landmarks(in);
}

inline void write_landmarks(std::ostream& out, const LandmarkSet& lm) {
  out << "# x,y\n";
  for (const auto& p : lm.boundary) out << detail::num(p.x) << ',' << detail::num(p.y) << '\n';
  out << detail::num(lm.gutta_apex.x) << ',' << detail::num(lm.gutta_apex.y) << '\n';
  if (lm.canal_axis) {
    for (const auto& p : {lm.canal_axis->first, lm.canal_axis->second}) {
      out << detail::num(p.x) << ',' << detail::num(p.y) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Masks and curves

/// Plain-text PGM (P2), maxval 255, set pixels written as 255.
inline void write_pgm(std::ostream& out, const BinaryMask& m) {
  out << "P2\n" << m.width << ' ' << m.height << "\n255\n";
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) out << (x ? " " : "") << (m.get(y, x) ? 255 : 0);
    out << '\n';
  }
}

inline json curve_json(const PolynomialCurve& c, double angle) {
  return json{{"degree", c.degree},
              {"coeffs", c.coefficients},
              {"domain", {c.x_min, c.x_max}},
              {"rotation_angle", angle}};
}

// ---------------------------------------------------------------------------
// Predictions and point sets

struct Predictions {
  std::size_t classes = 0;
  std::vector<int> y_true, y_pred;
  std::vector<std::vector<double>> scores;
};

/// Columns true_label, pred_label, score_0 .. score_{K-1}. A header line
/// (starting with a letter or '#') is optional; K is the score column count.
inline Predictions parse_predictions(std::istream& in) {
  Predictions p;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#' || std::isalpha(static_cast<unsigned char>(t.front()))) continue;
    const auto f = detail::split(t, ',');
    if (f.size() < 4) {
      throw ParseError("row " + std::to_string(n) + ": expected true_label,pred_label and at least 2 scores", n);
    }
    const std::size_t k = f.size() - 2;
    if (p.classes == 0) p.classes = k;
    if (k != p.classes) {
      throw ParseError("row " + std::to_string(n) + ": " + std::to_string(k) + " scores, earlier rows had " +
                       std::to_string(p.classes), n);
    }
    const int yt = detail::parse_int(f[0], n, "true_label"), yp = detail::parse_int(f[1], n, "pred_label");
    if (yt < 0 || yp < 0 || static_cast<std::size_t>(yt) >= k || static_cast<std::size_t>(yp) >= k) {
      throw ParseError("row " + std::to_string(n) + ": label outside 0.." + std::to_string(k - 1), n);
    }
    std::vector<double> s;
    for (std::size_t c = 0; c < k; ++c) s.push_back(detail::parse_double(f[2 + c], n, "score_" + std::to_string(c)));
    p.y_true.push_back(yt);
    p.y_pred.push_back(yp);
    p.scores.push_back(std::move(s));
  }
  if (p.y_true.empty()) throw ParseError("prediction file has no rows", n);
  return p;
}

inline Predictions read_predictions(const std::string& path) {
  auto in = detail::open_in(path);
  return parse_predictions(in);
}

inline void write_predictions(std::ostream& out, const Predictions& p) {
  out << "true_label,pred_label";
  for (std::size_t c = 0; c < p.classes; ++c) out << ",score_" << c;
  out << '\n';
  for (std::size_t i = 0; i < p.y_true.size(); ++i) {
    out << p.y_true[i] << ',' << p.y_pred[i];
    for (double s : p.scores[i]) out << ',' << detail::num(s);
    out << '\n';
  }
}

/// One `x,y` pixel coordinate per line.
inline std::vector<Point> read_points(const std::string& path) {
  auto in = detail::open_in(path);
  auto pts = detail::parse_points(in);
  if (pts.empty()) throw ParseError("point-set file '" + path + "' has no points", 0);
  return pts;
}

inline void write_points(std::ostream& out, const std::vector<Point>& pts) {
  out << "# x,y\n";
  for (const auto& p : pts) out << detail::num(p.x) << ',' << detail::num(p.y) << '\n';
}

// ---------------------------------------------------------------------------
// Model config

inline json to_json(const ModelConfig& c) {
  json stem = json::array();
  for (const auto& l : c.stem) stem.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  json sched = json::array();
  for (const auto& s : c.schedule) sched.push_back({{"unit_h", s.unit_h}, {"unit_w", s.unit_w}, {"pool_after", s.pool_after}});
  return json{{"input", {c.input_channels, c.input_height, c.input_width}},
              {"stem", stem},
              {"branch_width", c.branch_width},
              {"theta", c.theta},
              {"local_groups", c.local_groups},
              {"phi", c.phi},
              {"heads", c.heads},
              {"classes", c.classes},
              {"schedule", sched}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const json& j) {
  static const std::vector<std::string> known{"input", "stem", "branch_width", "theta", "local_groups",
                                              "phi",   "heads", "classes",     "schedule", "seed"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown model config key '" + k + "'");
  }
  ModelConfig c;
  try {
    if (j.contains("input")) {
      const auto in = j.at("input").get<std::vector<std::size_t>>();
      if (in.size() != 3) throw ConfigError("config 'input' must be [C, H, W]");
      c.input_channels = in[0];
      c.input_height = in[1];
      c.input_width = in[2];
    }
    if (j.contains("stem")) {
      c.stem.clear();
      for (const auto& l : j.at("stem")) {
        c.stem.push_back({l.at("out_channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                          l.at("stride").get<std::size_t>()});
      }
    }
    auto take = [&j](const char* key, std::size_t& field) {
      if (j.contains(key)) field = j.at(key).get<std::size_t>();
    };
    take("branch_width", c.branch_width);
    take("theta", c.theta);
    take("local_groups", c.local_groups);
    take("phi", c.phi);
    take("heads", c.heads);
    take("classes", c.classes);
    if (j.contains("schedule")) {
      for (const auto& s : j.at("schedule")) {
        c.schedule.push_back({s.at("unit_h").get<std::size_t>(), s.at("unit_w").get<std::size_t>(),
                              s.value("pool_after", false)});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json read_json(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// Parameter file: "AGMBPAR1", u64 LE manifest length, JSON manifest
// [{"name", "shape"}...], then every tensor's values as LE float64 in
// manifest order.

inline constexpr char kParamMagic[8] = {'A', 'G', 'M', 'B', 'P', 'A', 'R', '1'};

namespace detail {

template <class T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto b = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(b.begin(), b.end());
    return std::bit_cast<T>(b);
  }
  return v;
}

template <class T>
void put(std::ostream& out, T v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("parameter file truncated", 0);
  return to_le(v);
}

}  // namespace detail

template <class Params>
void write_params(std::ostream& out, const Params& params) {
  json manifest = json::array();
  params.for_each([&](const std::string& name, const Tensor& t) { manifest.push_back({{"name", name}, {"shape", t.shape()}}); });
  const std::string m = manifest.dump();
  out.write(kParamMagic, sizeof kParamMagic);
  detail::put<std::uint64_t>(out, m.size());
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  params.for_each([&](const std::string&, const Tensor& t) {
    for (double v : t.data()) detail::put<double>(out, v);
  });
}

/// Reads values into an already-shaped `params`; names and shapes must match.
template <class Params>
void read_params(std::istream& in, Params& params) {
  char magic[sizeof kParamMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kParamMagic, sizeof magic) != 0) throw ParseError("not a parameter file (bad magic)", 0);
  const auto len = detail::get<std::uint64_t>(in);
  if (len > (std::uint64_t{1} << 30)) throw ParseError("parameter manifest too large", 0);
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("parameter file truncated in manifest", 0);
  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("parameter manifest: ") + e.what(), 0);
  }
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (i >= manifest.size()) throw ConfigError("parameter file has fewer tensors than the model");
    const auto& e = manifest[i++];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.shape()) {
      throw ConfigError("parameter file entry " + e.at("name").get<std::string>() + " " +
                        shape_str(e.at("shape").get<Shape>()) + " does not match " + name + " " + shape_str(t.shape()));
    }
    for (auto& v : t.data()) v = detail::get<double>(in);
  });
  if (i != manifest.size()) throw ConfigError("parameter file has more tensors than the model");
}

}  // namespace agmb::io
