#pragma once

// JSON-lines metrics log: one {step, epoch, split, metric_name, value, seed,
// method} object per line.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "eqssl/errors.hpp"

namespace eqssl {

struct MetricRecord {
  long step = 0;
  long epoch = 0;
  std::string split;
  std::string metric_name;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string method;

  nlohmann::ordered_json to_json() const {
    return {{"step", step},   {"epoch", epoch}, {"split", split}, {"metric_name", metric_name},
            {"value", value}, {"seed", seed},   {"method", method}};
  }
};

class MetricsLog {
public:
  MetricsLog() = default;

  /// Truncates `path`; records are flushed line by line.
  explicit MetricsLog(const std::filesystem::path& path)
      : out_(std::make_unique<std::ofstream>(path, std::ios::trunc)) {
    if (!*out_) throw IoError("metrics: cannot open " + path.string());
  }

  void write(const MetricRecord& r) {
    records_.push_back(r);
    if (out_) {
      *out_ << r.to_json().dump() << '\n';
      out_->flush();
      if (!*out_) throw IoError("metrics: write failed");
    }
  }

  const std::vector<MetricRecord>& records() const noexcept { return records_; }

private:
  std::unique_ptr<std::ofstream> out_;
  std::vector<MetricRecord> records_;
};

inline MetricRecord parse_metric_line(const std::string& line, const std::string& file, std::size_t lineno) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.step = j.at("step").get<long>();
    r.epoch = j.at("epoch").get<long>();
    r.split = j.at("split").get<std::string>();
    r.metric_name = j.at("metric_name").get<std::string>();
    r.value = j.at("value").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.method = j.at("method").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(file, lineno, e.what());
  }
}

inline std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("metrics: cannot open " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_metric_line(line, path.string(), lineno));
  }
  return out;
}

}  // namespace eqssl
