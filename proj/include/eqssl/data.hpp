#pragma once

// Synthetic eye images with analytically known gaze labels, the labels.csv
// folder format, and subject-level splitting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eqssl/affine.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/image.hpp"
#include "eqssl/png_io.hpp"
#include "eqssl/rng.hpp"

namespace eqssl {

struct Sample {
  Image image;
  std::optional<GazeLabel> label;
  int subject_id = 0;
};

struct DatasetHandle {
  enum class Provenance { synthetic, folder };

  std::vector<Sample> samples;
  std::string split_name;
  Provenance provenance = Provenance::synthetic;
  /// Rows skipped during ingestion, one human-readable record each.
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  bool labeled() const noexcept {
    return !samples.empty() &&
           std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.label.has_value(); });
  }

  std::vector<int> subjects() const {
    std::set<int> s;
    for (const auto& x : samples) s.insert(x.subject_id);
    return {s.begin(), s.end()};
  }
};

struct RenderConfig {
  int size = 32;
  /// Pupil displacement per unit of projected gaze, in pixels.
  double pupil_travel = 8.0;
  double eye_radius = 9.5;
  double pupil_radius = 3.0;
  double noise_sigma = 0.004;
  double max_yaw = 45.0 * std::numbers::pi / 180.0;
  double max_pitch = 30.0 * std::numbers::pi / 180.0;
};

namespace detail {

inline double unit_hash(std::uint64_t a, std::uint64_t b) noexcept {
  return static_cast<double>(hash_seed(a, b) >> 11) * 0x1.0p-53;
}

struct SubjectLook {
  double background;
  double face_delta;
  double aspect;
  double eye;
  double pupil;
};

inline SubjectLook subject_look(int subject_id) noexcept {
  const auto id = static_cast<std::uint64_t>(subject_id);
  return {0.22 + 0.16 * unit_hash(id, 1), 0.06 + 0.04 * unit_hash(id, 2), 0.88 + 0.12 * unit_hash(id, 3),
          0.80 + 0.12 * unit_hash(id, 4), 0.05 + 0.10 * unit_hash(id, 5)};
}

}  // namespace detail

/// Renders a size x size grayscale eye: subject-dependent background, a
/// centred face ellipse whose aspect ratio depends on the subject, a centred
/// eye disc and a dark pupil displaced by pupil_travel * (v_x, v_y) in the
/// y-up frame, where v is the unit gaze vector. Shapes are antialiased with
/// 4x4 supersampling; per-pixel Gaussian noise comes from nuisance_seed.
inline Image render_synthetic(const GazeLabel& g, int subject_id, std::uint64_t nuisance_seed,
                              const RenderConfig& cfg = {}) {
  const auto look = detail::subject_look(subject_id);
  const Vec3 v = gaze_to_vector(g);
  const double px = cfg.pupil_travel * v.x;
  const double py = cfg.pupil_travel * v.y;
  const double half = cfg.size / 2.0;
  const double face_rx = (half - 3.0) * look.aspect;
  const double face_ry = half - 2.0;
  const double eye_r2 = cfg.eye_radius * cfg.eye_radius;
  const double pupil_r2 = cfg.pupil_radius * cfg.pupil_radius;

  Image img(cfg.size, cfg.size, 1);
  Rng noise(hash_seed(nuisance_seed, 0x5eed));
  constexpr int ss = 4;
  for (int i = 0; i < cfg.size; ++i) {
    for (int j = 0; j < cfg.size; ++j) {
      double acc = 0.0;
      for (int a = 0; a < ss; ++a) {
        for (int b = 0; b < ss; ++b) {
          const double x = j + (b + 0.5) / ss - half;
          const double y = half - (i + (a + 0.5) / ss);
          double val = look.background;
          const double ex = x / face_rx;
          const double ey = y / face_ry;
          if (ex * ex + ey * ey <= 1.0) val += look.face_delta;
          if (x * x + y * y <= eye_r2) val = look.eye;
          const double dx = x - px;
          const double dy = y - py;
          if (dx * dx + dy * dy <= pupil_r2) val = look.pupil;
          acc += val;
        }
      }
      img.at(0, i, j) = static_cast<float>(acc / (ss * ss) + cfg.noise_sigma * noise.normal());
    }
  }
  clamp_unit(img);
  return img;
}

inline GazeLabel sample_gaze(Rng& rng, const RenderConfig& cfg = {}) {
  const double yaw = rng.uniform(-cfg.max_yaw, cfg.max_yaw);
  const double pitch = rng.uniform(-cfg.max_pitch, cfg.max_pitch);
  return {yaw, pitch};
}

/// n synthetic samples over subjects first_subject .. first_subject+n_subjects-1
/// assigned round-robin. Sample i is rendered from hash(seed, i) alone, so
/// the result does not depend on `workers`.
inline DatasetHandle generate_dataset(long n, int n_subjects, std::uint64_t seed, const RenderConfig& cfg = {},
                                      int first_subject = 0, bool with_labels = true, unsigned workers = 0) {
  if (n <= 0 || n_subjects <= 0) throw ArgumentError("generate_dataset: n and n_subjects must be positive");
  if (n < n_subjects) throw ArgumentError("generate_dataset: need n >= n_subjects");
  if (first_subject < 0) throw ArgumentError("generate_dataset: subject ids must be non-negative");
  DatasetHandle ds;
  ds.split_name = "synthetic";
  ds.provenance = DatasetHandle::Provenance::synthetic;
  ds.samples.resize(static_cast<std::size_t>(n));

  auto render_one = [&](std::size_t i) {
    Rng rng(hash_seed(seed, i));
    const GazeLabel g = sample_gaze(rng, cfg);
    Sample& s = ds.samples[i];
    s.subject_id = first_subject + static_cast<int>(i % static_cast<std::size_t>(n_subjects));
    s.image = render_synthetic(g, s.subject_id, rng.next_u64(), cfg);
    if (with_labels) s.label = g;
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) render_one(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < ds.samples.size(); i += workers) render_one(i);
      });
    for (auto& t : pool) t.join();
  }
  return ds;
}

/// Default synthetic splits. Subject ranges are disjoint: labeled 0-39,
/// test 40-49, unlabeled pretraining pool 1000-1199.
inline DatasetHandle synth_pretrain_set(std::uint64_t seed = 0, unsigned workers = 0) {
  auto ds = generate_dataset(20000, 200, hash_seed(seed, 0x9e7), {}, 1000, false, workers);
  ds.split_name = "pretrain";
  return ds;
}

inline DatasetHandle synth_labeled_set(std::uint64_t seed = 0, unsigned workers = 0) {
  auto ds = generate_dataset(4000, 40, hash_seed(seed, 0x1ab), {}, 0, true, workers);
  ds.split_name = "train";
  return ds;
}

inline DatasetHandle synth_test_set(std::uint64_t seed = 0, unsigned workers = 0) {
  auto ds = generate_dataset(1000, 10, hash_seed(seed, 0x7e5), {}, 40, true, workers);
  ds.split_name = "test";
  return ds;
}

/// Keeps ceil(fraction * #subjects) subjects chosen uniformly at random,
/// with all of their samples in original order.
inline DatasetHandle subject_fraction_split(const DatasetHandle& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ArgumentError("subject_fraction_split: fraction must lie in (0, 1]");
  std::vector<int> subjects = ds.subjects();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(subjects.size()) - 1e-9));
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < subjects.size(); ++i) {
    const std::size_t j = i + rng.below(subjects.size() - i);
    std::swap(subjects[i], subjects[j]);
  }
  const std::set<int> kept(subjects.begin(), subjects.begin() + static_cast<long>(std::min(keep, subjects.size())));
  DatasetHandle out;
  out.split_name = ds.split_name;
  out.provenance = ds.provenance;
  for (const auto& s : ds.samples)
    if (kept.count(s.subject_id)) out.samples.push_back(s);
  return out;
}

/// Samples of `ds` whose subject is absent from `other`.
inline DatasetHandle subject_complement(const DatasetHandle& ds, const DatasetHandle& other) {
  const auto used = other.subjects();
  const std::set<int> excluded(used.begin(), used.end());
  DatasetHandle out;
  out.split_name = ds.split_name;
  out.provenance = ds.provenance;
  for (const auto& s : ds.samples)
    if (!excluded.count(s.subject_id)) out.samples.push_back(s);
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto e = s.find_last_not_of(ws);
  s.erase(e == std::string::npos ? 0 : e + 1);
  return s;
}

inline double parse_real(const std::string& s, const std::string& file, std::size_t line, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(file, line, std::string("invalid ") + what + " '" + s + "'");
  }
}

}  // namespace detail

inline constexpr const char* kManifestHeader = "path,subject_id,yaw_rad,pitch_rad";

/// Reads `<dir>/labels.csv` and the images it references. Images are resized
/// to height x width with `channels` planes. Rows whose image file is missing
/// are skipped and reported in `warnings`.
inline DatasetHandle load_folder(const std::filesystem::path& dir, int height = 32, int width = 32,
                                 int channels = 1) {
  const auto manifest = dir / "labels.csv";
  std::ifstream in(manifest);
  if (!in) throw IoError("load_folder: cannot open " + manifest.string());
  const std::string file = manifest.string();

  DatasetHandle ds;
  ds.split_name = dir.filename().string();
  ds.provenance = DatasetHandle::Provenance::folder;

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(file, 1, "missing header");
  ++lineno;
  if (detail::trim(line) != kManifestHeader)
    throw ParseError(file, lineno, std::string("expected header '") + kManifestHeader + "'");

  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(detail::trim(line));
    if (fields.size() != 4) throw ParseError(file, lineno, "expected 4 fields, got " + std::to_string(fields.size()));
    const std::string rel = detail::trim(fields[0]);
    if (rel.empty()) throw ParseError(file, lineno, "empty path");
    const double subject = detail::parse_real(detail::trim(fields[1]), file, lineno, "subject_id");
    if (subject < 0 || subject != std::floor(subject) || subject > 1e9)
      throw ParseError(file, lineno, "subject_id must be a non-negative integer");
    const double yaw = detail::parse_real(detail::trim(fields[2]), file, lineno, "yaw_rad");
    const double pitch = detail::parse_real(detail::trim(fields[3]), file, lineno, "pitch_rad");
    if (std::abs(yaw) > std::numbers::pi || std::abs(pitch) > std::numbers::pi / 2)
      throw ParseError(file, lineno, "label out of range");

    const auto img_path = dir / rel;
    if (!std::filesystem::exists(img_path)) {
      ds.warnings.push_back(file + ":" + std::to_string(lineno) + ": missing image " + img_path.string());
      continue;
    }
    Sample s;
    s.image = resize_bilinear(read_png(img_path.string(), channels), height, width);
    s.label = GazeLabel{yaw, pitch};
    s.subject_id = static_cast<int>(subject);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

/// Writes PNGs plus labels.csv in the format read by load_folder.
/// Unlabeled samples are written with zero angles.
inline void write_folder(const DatasetHandle& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "labels.csv");
  if (!out) throw IoError("write_folder: cannot create " + (dir / "labels.csv").string());
  out << kManifestHeader << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "img_%06zu.png", i);
    write_png((dir / name).string(), s.image);
    const GazeLabel g = s.label.value_or(GazeLabel{});
    out << name << ',' << s.subject_id << ',' << g.yaw << ',' << g.pitch << '\n';
  }
  if (!out) throw IoError("write_folder: write failed");
}

}  // namespace eqssl
