#pragma once

// Angular gaze error, the equivariance metric and run summaries.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "eqssl/affine.hpp"
#include "eqssl/data.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/ftl.hpp"
#include "eqssl/image.hpp"
#include "eqssl/metrics.hpp"
#include "eqssl/png_io.hpp"

namespace eqssl {

/// Great-circle distance in degrees between the two gaze directions.
inline double angular_error(const GazeLabel& g, const GazeLabel& g_hat) {
  const Vec3 a = gaze_to_vector(g);
  const Vec3 b = gaze_to_vector(g_hat);
  const double dot = std::clamp(a.x * b.x + a.y * b.y + a.z * b.z, -1.0, 1.0);
  return std::acos(dot) * 180.0 / std::numbers::pi;
}

/// Image-space counterpart of a 2x2 transform.
inline Image apply_linear_to_image(const AffineTransform2D& t, const Image& img) {
  using K = AffineTransform2D::Kind;
  if (t.is_identity()) return img;
  if (t.kind == K::hflip) return hflip_image(img);
  if (t.kind == K::rotation) return rotate_image(img, t.angle_rad);
  const double det = t.det();
  if (std::abs(det) < 1e-12) throw ArgumentError("apply_linear_to_image: singular transform");
  const double a = t.m[1][1] / det, b = -t.m[0][1] / det, c = -t.m[1][0] / det, d = t.m[0][0] / det;
  return warp_about_center(img, [=](double x, double y) { return std::pair{a * x + b * y, c * x + d * y}; });
}

struct NamedTransform {
  std::string name;
  AffineTransform2D transform;
};

/// {-30, -20, -10, +10, +20, +30} degree rotations and the horizontal flip.
inline std::vector<NamedTransform> default_equivariance_transforms() {
  std::vector<NamedTransform> out;
  for (int deg : {-30, -20, -10, 10, 20, 30}) {
    const auto t = rotation_matrix(deg * std::numbers::pi / 180.0);
    out.push_back({t.describe(), t});
  }
  out.push_back({"hflip", hflip_matrix()});
  return out;
}

struct EquivarianceRecord {
  std::string transform;
  double value = 0.0;
  std::size_t samples = 0;
};

struct EquivarianceReport {
  std::string model;
  bool normalized_features = true;
  std::vector<EquivarianceRecord> records;

  double value(const std::string& name) const {
    for (const auto& r : records)
      if (r.transform == name) return r.value;
    throw ArgumentError("equivariance report has no transform '" + name + "'");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = {{"model", model}, {"normalized_features", normalized_features}};
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : records) j["records"].push_back({{"transform", r.transform}, {"L_equ", r.value}, {"samples", r.samples}});
    return j;
  }
};

/// Mean over the first n_samples images of ||f(t x) - FTL(t, f(x))||.
/// `encode_batch` maps a vector of images to a B x d matrix of embeddings.
template <typename S, typename F>
EquivarianceReport equ_metric_fn(F&& encode_batch, const DatasetHandle& ds,
                                 const std::vector<NamedTransform>& transforms, std::size_t n_samples,
                                 const std::string& model = "", bool normalized = true, std::size_t chunk = 256) {
  if (ds.empty() || n_samples == 0) throw ArgumentError("equ_metric: empty dataset");
  if (chunk == 0) throw ArgumentError("equ_metric: chunk must be >= 1");
  const std::size_t n = std::min(n_samples, ds.size());
  EquivarianceReport rep;
  rep.model = model;
  rep.normalized_features = normalized;
  for (const auto& nt : transforms) {
    std::vector<double> dists;
    for (std::size_t s = 0; s < n; s += chunk) {
      std::vector<Image> base, moved;
      for (std::size_t i = s; i < std::min(n, s + chunk); ++i) {
        base.push_back(ds.samples[i].image);
        moved.push_back(apply_linear_to_image(nt.transform, ds.samples[i].image));
      }
      const Mat<S> z = encode_batch(base);
      const Mat<S> zt = encode_batch(moved);
      for (long i = 0; i < z.rows(); ++i) {
        const Vec<S> expected = ftl<S>(nt.transform, z.row(i).transpose());
        dists.push_back(static_cast<double>((zt.row(i).transpose() - expected).norm()));
      }
    }
    // summed in sorted order so the value does not depend on iteration order
    std::sort(dists.begin(), dists.end());
    double acc = 0.0;
    for (double d : dists) acc += d;
    rep.records.push_back({nt.name, acc / double(dists.size()), dists.size()});
  }
  return rep;
}

template <typename S>
EquivarianceReport equ_metric(const EncoderParams<S>& enc, const DatasetHandle& ds,
                              const std::vector<NamedTransform>& transforms, std::size_t n_samples,
                              const std::string& model = "", std::size_t chunk = 256) {
  auto f = [&enc](const std::vector<Image>& imgs) { return encode(enc, pack_images<S>(imgs, enc.config)); };
  return equ_metric_fn<S>(f, ds, transforms, n_samples, model, enc.config.normalize_output, chunk);
}

// ---------------------------------------------------------------------------
// Run summaries

struct SummaryRow {
  std::string method;
  std::string split;
  std::string metric;
  std::size_t runs = 0;
  double mean = 0.0;
  /// Population standard deviation, sqrt(sum (x - mean)^2 / runs).
  double stdev = 0.0;
  std::vector<double> values;
};

struct Summary {
  std::vector<SummaryRow> rows;
  /// (method, split, metric) -> epoch -> values across runs.
  std::map<std::tuple<std::string, std::string, std::string>, std::map<long, std::vector<double>>> curves;

  const SummaryRow* find(const std::string& method, const std::string& metric, const std::string& split = "") const {
    for (const auto& r : rows)
      if (r.method == method && r.metric == metric && (split.empty() || r.split == split)) return &r;
    return nullptr;
  }
};

inline std::pair<double, double> mean_and_population_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / double(v.size()))};
}

/// Final value of each (method, split, metric) per file, aggregated across
/// files. Throws ArgumentError if any metric named in `required` is absent.
inline Summary summarize(const std::vector<std::filesystem::path>& logs, const std::vector<std::string>& required = {}) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::vector<double>> finals;
  Summary sum;
  for (const auto& path : logs) {
    std::map<Key, double> last;
    for (const auto& r : read_metrics(path)) {
      const Key k{r.method, r.split, r.metric_name};
      last[k] = r.value;
      sum.curves[k][r.epoch].push_back(r.value);
    }
    for (const auto& [k, v] : last) finals[k].push_back(v);
  }
  for (const auto& [k, vals] : finals) {
    const auto [m, s] = mean_and_population_std(vals);
    sum.rows.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), vals.size(), m, s, vals});
  }
  std::vector<std::string> missing;
  for (const auto& name : required)
    if (std::none_of(sum.rows.begin(), sum.rows.end(), [&](const SummaryRow& r) { return r.metric == name; }))
      missing.push_back(name);
  if (!missing.empty()) {
    std::string msg = "summarize: missing metrics:";
    for (const auto& m : missing) msg += " " + m;
    throw ArgumentError(msg);
  }
  return sum;
}

inline std::string format_table(const Summary& s) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %-8s %-22s %5s %14s %14s\n", "method", "split", "metric", "runs", "mean",
                "std");
  out << line << std::string(80, '-') << '\n';
  for (const auto& r : s.rows) {
    std::snprintf(line, sizeof(line), "%-12s %-8s %-22s %5zu %14.6f %14.6f\n", r.method.c_str(), r.split.c_str(),
                  r.metric.c_str(), r.runs, r.mean, r.stdev);
    out << line;
  }
  return out.str();
}

inline nlohmann::ordered_json summary_json(const Summary& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : s.rows)
    j.push_back({{"method", r.method},
                 {"split", r.split},
                 {"metric", r.metric},
                 {"runs", r.runs},
                 {"mean", r.mean},
                 {"std", r.stdev},
                 {"values", r.values}});
  return j;
}

namespace detail {

struct Canvas {
  Image img;

  Canvas(int h, int w) : img(h, w, 3, 1.0f) {}

  void put(int x, int y, const std::array<float, 3>& rgb) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[std::size_t(c)];
  }

  void rect(int x0, int y0, int x1, int y1, const std::array<float, 3>& rgb) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(x, y, rgb);
  }

  void line(int x0, int y0, int x1, int y1, const std::array<float, 3>& rgb) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      put(x0, y0, rgb);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

inline std::array<float, 3> palette(std::size_t i) {
  static const std::array<std::array<float, 3>, 6> colors{{{0.12f, 0.47f, 0.71f},
                                                           {1.00f, 0.50f, 0.05f},
                                                           {0.17f, 0.63f, 0.17f},
                                                           {0.84f, 0.15f, 0.16f},
                                                           {0.58f, 0.40f, 0.74f},
                                                           {0.55f, 0.34f, 0.29f}}};
  return colors[i % colors.size()];
}

inline std::string slug(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

}  // namespace detail

/// Writes summary.txt, summary.json, one bar chart per (split, metric)
/// (methods in alphabetical order, whisker = std) and one line chart per
/// (split, metric) of the per-epoch means.
inline void write_report(const Summary& s, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "summary.txt");
    out << format_table(s);
    if (!out) throw IoError("report: cannot write summary.txt");
  }
  {
    std::ofstream out(dir / "summary.json");
    out << summary_json(s).dump(2) << '\n';
    if (!out) throw IoError("report: cannot write summary.json");
  }
  std::map<std::pair<std::string, std::string>, std::vector<const SummaryRow*>> groups;
  for (const auto& r : s.rows) groups[{r.split, r.metric}].push_back(&r);
  constexpr int H = 240, W = 360, pad = 20;
  const std::array<float, 3> black{0.f, 0.f, 0.f};
  for (const auto& [key, rows] : groups) {
    detail::Canvas c(H, W);
    double top = 0.0;
    for (const auto* r : rows) top = std::max(top, r->mean + r->stdev);
    if (top <= 0.0) top = 1.0;
    const int slot = (W - 2 * pad) / int(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int x0 = pad + int(i) * slot + slot / 6;
      const int x1 = pad + int(i + 1) * slot - slot / 6;
      const int y = H - pad - int((H - 2 * pad) * std::max(0.0, rows[i]->mean) / top);
      c.rect(x0, y, x1, H - pad, detail::palette(i));
      const int yl = H - pad - int((H - 2 * pad) * std::max(0.0, rows[i]->mean - rows[i]->stdev) / top);
      const int yh = H - pad - int((H - 2 * pad) * (rows[i]->mean + rows[i]->stdev) / top);
      c.line((x0 + x1) / 2, yl, (x0 + x1) / 2, yh, black);
    }
    c.line(pad, H - pad, W - pad, H - pad, black);
    c.line(pad, pad, pad, H - pad, black);
    write_png((dir / ("bar_" + detail::slug(key.first + "_" + key.second) + ".png")).string(), c.img);
  }

  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::string, std::map<long, double>>>> lines;
  for (const auto& [k, byepoch] : s.curves) {
    std::map<long, double> means;
    for (const auto& [e, v] : byepoch) means[e] = mean_and_population_std(v).first;
    lines[{std::get<1>(k), std::get<2>(k)}].push_back({std::get<0>(k), means});
  }
  for (const auto& [key, series] : lines) {
    double lo = 1e300, hi = -1e300;
    long emin = 1L << 40, emax = -(1L << 40);
    for (const auto& [m, pts] : series)
      for (const auto& [e, v] : pts) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        emin = std::min(emin, e);
        emax = std::max(emax, e);
      }
    if (emax <= emin) continue;
    if (hi <= lo) hi = lo + 1.0;
    detail::Canvas c(H, W);
    auto px = [&](long e) { return pad + int(double(W - 2 * pad) * double(e - emin) / double(emax - emin)); };
    auto py = [&](double v) { return H - pad - int(double(H - 2 * pad) * (v - lo) / (hi - lo)); };
    for (std::size_t i = 0; i < series.size(); ++i) {
      const auto& pts = series[i].second;
      for (auto it = pts.begin(); std::next(it) != pts.end(); ++it) {
        const auto nx = std::next(it);
        c.line(px(it->first), py(it->second), px(nx->first), py(nx->second), detail::palette(i));
      }
    }
    c.line(pad, H - pad, W - pad, H - pad, black);
    c.line(pad, pad, pad, H - pad, black);
    write_png((dir / ("curve_" + detail::slug(key.first + "_" + key.second) + ".png")).string(), c.img);
  }
}

}  // namespace eqssl
