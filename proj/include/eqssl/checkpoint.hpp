#pragma once

// On-disk checkpoint: a directory holding manifest.json plus one raw
// little-endian float32 row-major file per named array. Writes go to a
// sibling temporary directory that is renamed into place.

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eqssl/clustering.hpp"
#include "eqssl/config_json.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"

namespace eqssl {

/// Training runs in single precision.
using Real = float;

struct Checkpoint {
  EncoderParams<Real> encoder;
  PrototypeBank<Real> prototypes;
  std::optional<GazeHead<Real>> head;
  /// Optimizer buffers, keyed "opt.<array>".
  std::map<std::string, std::vector<Real>> optimizer_state;
  long step = 0;
  std::uint64_t seed = 0;
  /// Free-form echo of the run configuration.
  nlohmann::json config = nlohmann::json::object();
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void write_raw(const std::filesystem::path& path, const Real* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(Real)));
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

inline void read_raw(const std::filesystem::path& path, Real* data, std::size_t n) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("checkpoint: cannot read " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != n * sizeof(Real))
    throw IoError("checkpoint: " + path.string() + " holds " + std::to_string(bytes) + " bytes, expected " +
                  std::to_string(n * sizeof(Real)));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(bytes));
}

template <typename F>
void for_each_array(Checkpoint& c, F&& f) {
  c.encoder.for_each(f);
  c.prototypes.for_each(f);
  if (c.head) c.head->for_each(f);
  for (auto& [name, buf] : c.optimizer_state)
    f(ArrayView<Real>{name, {std::int64_t(buf.size())}, buf.data(), buf.size()});
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  auto& c = const_cast<Checkpoint&>(ckpt);
  nlohmann::json arrays = nlohmann::json::array();
  detail::for_each_array(c, [&](ArrayView<Real> a) {
    const std::string file = a.name + ".bin";
    detail::write_raw(tmp / file, a.data, a.size);
    arrays.push_back({{"name", a.name}, {"shape", a.shape}, {"file", file}});
  });

  nlohmann::json manifest = {{"format", "eqssl-checkpoint"},
                             {"version", 1},
                             {"dtype", "float32"},
                             {"byte_order", "little"},
                             {"layout", "row-major"},
                             {"seed", ckpt.seed},
                             {"step", ckpt.step},
                             {"encoder", ckpt.encoder.config},
                             {"encoder_init_seed", ckpt.encoder.init_seed},
                             {"prototype_count", ckpt.prototypes.count()},
                             {"has_head", ckpt.head.has_value()},
                             {"config", ckpt.config},
                             {"arrays", arrays}};
  {
    std::ofstream out(tmp / "manifest.json");
    if (!out) throw IoError("checkpoint: cannot write manifest in " + tmp.string());
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("checkpoint: manifest write failed");
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("checkpoint: cannot open " + mpath.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(mpath.string(), 0, e.what());
  }
  if (m.value("format", "") != "eqssl-checkpoint" || m.value("dtype", "") != "float32" ||
      m.value("byte_order", "") != "little" || m.value("layout", "") != "row-major")
    throw ParseError(mpath.string(), 0, "unsupported checkpoint format");

  Checkpoint c;
  const EncoderConfig ecfg = m.at("encoder").get<EncoderConfig>();
  c.encoder = init_encoder<Real>(ecfg, m.value("encoder_init_seed", std::uint64_t{0}));
  c.prototypes.P = RowMat<Real>::Zero(ecfg.embed_dim, m.at("prototype_count").get<int>());
  if (m.value("has_head", false)) c.head = init_gaze_head<Real>(ecfg.feature_dim(), 0);
  c.step = m.value("step", 0L);
  c.seed = m.value("seed", std::uint64_t{0});
  c.config = m.value("config", nlohmann::json::object());

  std::map<std::string, nlohmann::json> entries;
  for (const auto& a : m.at("arrays")) entries[a.at("name").get<std::string>()] = a;
  for (const auto& [name, a] : entries)
    if (name.rfind("opt.", 0) == 0) {
      std::size_t n = 1;
      for (auto d : a.at("shape")) n *= d.get<std::size_t>();
      c.optimizer_state[name].resize(n);
    }

  std::size_t seen = 0;
  detail::for_each_array(c, [&](ArrayView<Real> v) {
    const auto it = entries.find(v.name);
    if (it == entries.end()) throw ParseError(mpath.string(), 0, "missing array '" + v.name + "'");
    if (it->second.at("shape").get<std::vector<std::int64_t>>() != v.shape)
      throw ParseError(mpath.string(), 0, "shape mismatch for '" + v.name + "'");
    detail::read_raw(dir / it->second.at("file").get<std::string>(), v.data, v.size);
    ++seen;
  });
  if (seen != entries.size()) throw ParseError(mpath.string(), 0, "unexpected arrays in manifest");
  return c;
}

/// FNV-1a over the raw bytes of the given arrays.
template <typename S>
std::uint64_t hash_arrays(const std::vector<ArrayView<S>>& arrays) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& a : arrays) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(a.data);
    for (std::size_t i = 0; i < a.size * sizeof(S); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace eqssl
