#pragma once

// Command-line driver: pretrain, finetune, linear-eval, equivariance, report,
// render. Exit codes: 0 ok, 2 usage/config, 3 I/O or input format, 4 training
// aborted on a non-finite value.

#include <CLI11.hpp>
#include <glob.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "eqssl/checkpoint.hpp"
#include "eqssl/data.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/evalkit.hpp"
#include "eqssl/metrics.hpp"
#include "eqssl/trainer.hpp"

namespace eqssl {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitIo = 3, kExitTraining = 4 };

namespace cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

/// Options of one subcommand plus a way to echo their resolved values.
struct FlagSet {
  CLI::App* app = nullptr;
  std::vector<std::pair<std::string, std::function<json()>>> echo;

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    echo.emplace_back(name, [&var] { return json(var); });
    return app->add_option("--" + name, var, help)->capture_default_str();
  }

  CLI::Option* add_list(const std::string& name, std::vector<double>& var, const std::string& help) {
    echo.emplace_back(name, [&var] { return json(var); });
    return app->add_option("--" + name, var, help)->delimiter(',')->capture_default_str();
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    echo.emplace_back(name, [&var] { return json(var); });
    return app->add_flag("--" + name, var, help);
  }

  json resolved() const {
    json j;
    j["command"] = app->get_name();
    for (const auto& [name, get] : echo) j[name] = get();
    return j;
  }
};

/// Values shared by several subcommands.
struct Common {
  std::string out;
  std::string data = "synth";
  std::string config;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
};

struct PretrainArgs {
  std::string method = "swat";
  long epochs = 30;
  long steps = 0;
  int batch_size = 64;
  int prototypes = ClusterConfig{}.prototypes;
  int dim = EncoderConfig{}.embed_dim;
  double temperature = ClusterConfig{}.temperature;
  int sinkhorn_iters = ClusterConfig{}.sinkhorn_iters;
  double eps = ClusterConfig{}.sinkhorn_eps;
  double rotation_max = 30.0;
  double hflip_p = CatalogConfig{}.hflip_p;
  double crop_p = CatalogConfig{}.crop_p;
  double lr = TrainConfig{}.lr;
  double weight_decay = TrainConfig{}.weight_decay;
  long warmup_epochs = 1;
  std::string schedule = "cosine";
  std::vector<double> milestones;
  std::string activation = "tanh";
  bool no_sinkhorn_targets = false;
  bool no_data_init = false;
  long log_every = 50;
};

struct FinetuneArgs {
  std::string weights = "random";
  double fraction = 1.0;
  long epochs = 20;
  long steps = 0;
  int batch_size = 64;
  double lr = 1e-3;
  std::string schedule = "step";
  std::vector<double> milestones{8, 16};
  double rotation_max = 30.0;
  double hflip_p = CatalogConfig{}.hflip_p;
  bool no_augment = false;
  int dim = EncoderConfig{}.embed_dim;
};

struct LinearArgs {
  std::string weights = "random";
  long epochs = 200;
  double lr = 1e-2;
  int dim = EncoderConfig{}.embed_dim;
};

struct EquivarianceArgs {
  std::string weights = "random";
  std::vector<double> rotations{-30, -20, -10, 10, 20, 30};
  bool no_flip = false;
  long samples = 500;
  int dim = EncoderConfig{}.embed_dim;
};

struct RenderArgs {
  long n = 100;
  int subjects = 10;
  int first_subject = 0;
  bool no_labels = false;
};

inline unsigned env_workers() {
  const char* v = std::getenv("EQSSL_NUM_WORKERS");
  if (!v || !*v) return 0;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 0 || n > 256) throw ConfigError("EQSSL_NUM_WORKERS must be an integer in [0, 256]");
  return static_cast<unsigned>(n);
}

inline LrSchedule parse_schedule(const std::string& s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "step") return LrSchedule::step;
  throw ConfigError("unknown schedule '" + s + "'");
}

inline std::vector<long> to_epochs(const std::vector<double>& v) {
  std::vector<long> out;
  for (double x : v) {
    if (!(x >= 0) || x != std::floor(x)) throw ConfigError("milestones must be non-negative integers");
    out.push_back(static_cast<long>(x));
  }
  return out;
}

/// "synth" or "folder:PATH".
inline std::optional<fs::path> folder_of(const std::string& data) {
  if (data == "synth") return std::nullopt;
  if (data.rfind("folder:", 0) == 0 && data.size() > 7) return fs::path(data.substr(7));
  throw ConfigError("--data must be 'synth' or 'folder:PATH'");
}

inline void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw IoError("no such directory: " + p.string());
}

/// Labeled train/test pair: synthetic splits, or PATH/train and PATH/test.
inline std::pair<DatasetHandle, DatasetHandle> labeled_splits(const Common& c, const EncoderConfig& enc,
                                                              unsigned workers) {
  if (auto dir = folder_of(c.data)) {
    require_dir(*dir);
    auto train = load_folder(*dir / "train", enc.input_h, enc.input_w, enc.input_c);
    auto test = load_folder(*dir / "test", enc.input_h, enc.input_w, enc.input_c);
    for (const auto* ds : {&train, &test})
      for (const auto& w : ds->warnings) std::cerr << "warning: " << w << '\n';
    return {std::move(train), std::move(test)};
  }
  return {synth_labeled_set(c.data_seed, workers), synth_test_set(c.data_seed, workers)};
}

/// Loads `weights` (a checkpoint directory or a run directory holding
/// checkpoint/). Returns nullopt for "random".
inline std::optional<Checkpoint> load_weights(const std::string& weights) {
  if (weights == "random") return std::nullopt;
  fs::path p(weights);
  if (!fs::exists(p / "manifest.json") && fs::exists(p / "checkpoint" / "manifest.json")) p /= "checkpoint";
  if (!fs::exists(p / "manifest.json")) throw IoError("checkpoint not found: " + weights);
  return load_checkpoint(p);
}

inline std::string checkpoint_method(const Checkpoint& c) {
  if (c.config.is_object() && c.config.contains("method") && c.config["method"].is_string())
    return c.config["method"].get<std::string>();
  return "pretrained";
}

inline void prepare_out(const std::string& out, const json& resolved) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "config.json");
  f << resolved.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + (fs::path(out) / "config.json").string());
}

inline TrainConfig pretrain_config(const Common& c, const PretrainArgs& a, unsigned workers) {
  TrainConfig cfg;
  cfg.method = parse_method(a.method);
  if (cfg.method == Method::supervised) throw ConfigError("pretrain: --method must be swav or swat");
  cfg.epochs = a.epochs;
  cfg.max_steps = a.steps;
  cfg.batch_size = a.batch_size;
  cfg.lr = a.lr;
  cfg.weight_decay = a.weight_decay;
  cfg.warmup_epochs = a.warmup_epochs;
  cfg.lr_schedule = parse_schedule(a.schedule);
  cfg.step_milestones = to_epochs(a.milestones);
  cfg.seed = c.seed;
  cfg.data_init = !a.no_data_init;
  cfg.log_every = a.log_every;
  cfg.workers = workers;
  cfg.cluster.prototypes = a.prototypes;
  cfg.cluster.temperature = a.temperature;
  cfg.cluster.sinkhorn_iters = a.sinkhorn_iters;
  cfg.cluster.sinkhorn_eps = a.eps;
  cfg.cluster.sinkhorn_targets = !a.no_sinkhorn_targets;
  cfg.catalog.rotation_max_rad = a.rotation_max * std::numbers::pi / 180.0;
  cfg.catalog.hflip_p = a.hflip_p;
  cfg.catalog.crop_p = a.crop_p;
  cfg.encoder.embed_dim = a.dim;
  cfg.encoder.activation = parse_activation(a.activation);
  cfg.validate();
  return cfg;
}

inline int cmd_pretrain(const Common& c, const PretrainArgs& a, const json& resolved, std::ostream& out) {
  const unsigned workers = env_workers();
  const TrainConfig cfg = pretrain_config(c, a, workers);
  prepare_out(c.out, resolved);
  DatasetHandle ds;
  if (auto dir = folder_of(c.data)) {
    require_dir(*dir);
    ds = load_folder(*dir, cfg.encoder.input_h, cfg.encoder.input_w, cfg.encoder.input_c);
    for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  } else {
    ds = synth_pretrain_set(c.data_seed, workers);
  }
  MetricsLog log(fs::path(c.out) / "metrics.jsonl");
  PretrainOptions opt;
  opt.log = &log;
  opt.checkpoint_dir = fs::path(c.out) / "checkpoint";
  const PretrainResult r = pretrain(cfg, ds, opt);
  out << to_string(cfg.method) << ": " << r.step_losses.size() << " steps";
  if (!r.step_losses.empty()) out << ", final loss " << r.step_losses.back();
  out << "\ncheckpoint: " << (fs::path(c.out) / "checkpoint").string() << '\n';
  return kExitOk;
}

inline int cmd_finetune(const Common& c, const FinetuneArgs& a, const json& resolved, std::ostream& out) {
  const unsigned workers = env_workers();
  if (!(a.fraction > 0.0 && a.fraction <= 1.0)) throw ConfigError("--fraction must lie in (0, 1]");
  TrainConfig cfg;
  cfg.method = Method::supervised;
  cfg.epochs = a.epochs;
  cfg.max_steps = a.steps;
  cfg.batch_size = a.batch_size;
  cfg.lr = a.lr;
  cfg.warmup_epochs = 0;
  cfg.lr_schedule = parse_schedule(a.schedule);
  cfg.step_milestones = to_epochs(a.milestones);
  cfg.seed = c.seed;
  cfg.workers = workers;
  cfg.augment = !a.no_augment;
  cfg.catalog.rotation_max_rad = a.rotation_max * std::numbers::pi / 180.0;
  cfg.catalog.hflip_p = a.hflip_p;
  cfg.encoder.embed_dim = a.dim;
  folder_of(c.data);
  const auto ckpt = load_weights(a.weights);
  if (ckpt) cfg.encoder = ckpt->encoder.config;
  cfg.validate();
  prepare_out(c.out, resolved);

  auto [pool, test] = labeled_splits(c, cfg.encoder, workers);
  const DatasetHandle train = subject_fraction_split(pool, a.fraction, c.seed);
  const EncoderParams<Real> init = ckpt ? ckpt->encoder : random_encoder(cfg, train);
  const std::string method = ckpt ? checkpoint_method(*ckpt) : "supervised";

  // records carry the initialization's name so report groups by it
  MetricsLog raw;
  FinetuneResult r = finetune(init, train, test, cfg, &raw);
  MetricsLog log(fs::path(c.out) / "metrics.jsonl");
  for (MetricRecord rec : raw.records()) {
    rec.method = method;
    log.write(rec);
  }
  Checkpoint saved;
  saved.encoder = r.encoder;
  saved.prototypes = ckpt ? ckpt->prototypes : init_prototypes<Real>(cfg.encoder.embed_dim, 1, 0);
  saved.head = r.head;
  saved.seed = c.seed;
  saved.step = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs;
  saved.config = resolved;
  saved.config["method"] = method;
  save_checkpoint(saved, fs::path(c.out) / "checkpoint");
  out << method << " finetune on " << train.subjects().size() << " subjects (" << train.size()
      << " images): test angular error " << r.final_test_error << " deg\n";
  return kExitOk;
}

inline int cmd_linear_eval(const Common& c, const LinearArgs& a, const json& resolved, std::ostream& out) {
  const unsigned workers = env_workers();
  TrainConfig cfg;
  cfg.seed = c.seed;
  cfg.encoder.embed_dim = a.dim;
  folder_of(c.data);
  const auto ckpt = load_weights(a.weights);
  if (ckpt) cfg.encoder = ckpt->encoder.config;
  cfg.encoder.validate();
  prepare_out(c.out, resolved);

  auto [train, test] = labeled_splits(c, cfg.encoder, workers);
  const EncoderParams<Real> enc = ckpt ? ckpt->encoder : random_encoder(cfg, train);
  const std::string method = ckpt ? checkpoint_method(*ckpt) : "random";
  LinearFitConfig lf;
  lf.epochs = a.epochs;
  lf.lr = a.lr;
  lf.seed = c.seed;
  MetricsLog log(fs::path(c.out) / "metrics.jsonl");
  const LinearEvalResult r = linear_eval(enc, train, test, lf, &log, method);
  if (r.backbone_hash_before != r.backbone_hash_after) throw TrainingError("linear-eval modified the backbone", 0);
  out << method << " linear eval: train " << r.train_error << " deg, test " << r.test_error << " deg\n";
  return kExitOk;
}

inline int cmd_equivariance(const Common& c, const EquivarianceArgs& a, const json& resolved, std::ostream& out) {
  const unsigned workers = env_workers();
  if (a.samples <= 0) throw ConfigError("--samples must be positive");
  TrainConfig cfg;
  cfg.seed = c.seed;
  cfg.encoder.embed_dim = a.dim;
  const auto dir = folder_of(c.data);
  const auto ckpt = load_weights(a.weights);
  if (ckpt) cfg.encoder = ckpt->encoder.config;
  cfg.encoder.validate();
  std::vector<NamedTransform> transforms;
  for (double deg : a.rotations) {
    const auto t = rotation_matrix(deg * std::numbers::pi / 180.0);
    transforms.push_back({t.describe(), t});
  }
  if (!a.no_flip) transforms.push_back({"hflip", hflip_matrix()});
  if (transforms.empty()) throw ConfigError("equivariance: no transforms selected");
  prepare_out(c.out, resolved);

  DatasetHandle test;
  if (dir) {
    require_dir(*dir);
    const fs::path p = fs::is_directory(*dir / "test") ? *dir / "test" : *dir;
    test = load_folder(p, cfg.encoder.input_h, cfg.encoder.input_w, cfg.encoder.input_c);
  } else {
    test = synth_test_set(c.data_seed, workers);
  }
  const EncoderParams<Real> enc = ckpt ? ckpt->encoder : random_encoder(cfg, test);
  const std::string method = ckpt ? checkpoint_method(*ckpt) : "random";
  const EquivarianceReport rep = equ_metric(enc, test, transforms, std::size_t(a.samples), method);
  {
    std::ofstream f(fs::path(c.out) / "equivariance.json");
    f << rep.to_json().dump(2) << '\n';
    if (!f) throw IoError("cannot write equivariance.json");
  }
  MetricsLog log(fs::path(c.out) / "metrics.jsonl");
  for (const auto& r : rep.records) {
    log.write({0, 0, "test", "L_equ_" + r.transform, r.value, c.seed, method});
    out << method << " L_equ " << r.transform << ": " << r.value << '\n';
  }
  return kExitOk;
}

/// Expands each pattern; directories contribute their metrics.jsonl.
inline std::vector<fs::path> expand_runs(const std::vector<std::string>& patterns) {
  std::vector<fs::path> logs;
  for (const auto& pat : patterns) {
    glob_t g{};
    const int rc = ::glob(pat.c_str(), 0, nullptr, &g);
    if (rc == 0)
      for (std::size_t i = 0; i < g.gl_pathc; ++i) {
        fs::path p(g.gl_pathv[i]);
        if (fs::is_directory(p)) p /= "metrics.jsonl";
        if (fs::is_regular_file(p)) logs.push_back(p);
      }
    globfree(&g);
  }
  std::sort(logs.begin(), logs.end());
  logs.erase(std::unique(logs.begin(), logs.end()), logs.end());
  return logs;
}

inline int cmd_report(const Common& c, const std::vector<std::string>& runs, const json& resolved,
                      std::ostream& out) {
  if (runs.empty()) throw ConfigError("report: --runs is required");
  const auto logs = expand_runs(runs);
  if (logs.empty()) throw IoError("report: no metrics.jsonl matched --runs");
  prepare_out(c.out, resolved);
  const Summary s = summarize(logs);
  write_report(s, c.out);
  out << format_table(s);
  return kExitOk;
}

inline int cmd_render(const Common& c, const RenderArgs& a, const json& resolved, std::ostream& out) {
  const unsigned workers = env_workers();
  if (a.n <= 0 || a.subjects <= 0 || a.n < a.subjects || a.first_subject < 0)
    throw ConfigError("render: need n >= subjects >= 1 and first-subject >= 0");
  prepare_out(c.out, resolved);
  const DatasetHandle ds =
      generate_dataset(a.n, a.subjects, c.seed, {}, a.first_subject, !a.no_labels, workers);
  write_folder(ds, c.out);
  out << "wrote " << ds.size() << " images to " << c.out << '\n';
  return kExitOk;
}

/// Turns a flat JSON object into "--key value" tokens.
inline std::vector<std::string> config_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path.string() + ": expected a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, v] : j.items()) {
    if (key == "command" || key == "config") continue;
    const std::string flag = "--" + key;
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
    } else if (v.is_array()) {
      std::string joined;
      for (const auto& x : v) {
        if (!joined.empty()) joined += ',';
        joined += x.is_string() ? x.get<std::string>() : x.dump();
      }
      if (!joined.empty()) {
        args.push_back(flag);
        args.push_back(joined);
      }
    } else if (v.is_string()) {
      args.push_back(flag);
      args.push_back(v.get<std::string>());
    } else if (v.is_number()) {
      args.push_back(flag);
      args.push_back(v.dump());
    } else {
      throw ConfigError("config " + path.string() + ": unsupported value for '" + key + "'");
    }
  }
  return args;
}

/// Inserts config-file tokens right after the subcommand so that explicit
/// flags, parsed later, win.
inline std::vector<std::string> with_config(std::vector<std::string> args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string file;
    if (args[i] == "--config" && i + 1 < args.size())
      file = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      file = args[i].substr(9);
    if (file.empty()) continue;
    const auto extra = config_args(file);
    if (args.size() < 2) break;
    args.insert(args.begin() + 2, extra.begin(), extra.end());
    break;
  }
  return args;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"Equivariant self-supervised pretraining for gaze estimation", "eqssl"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Common common;
  PretrainArgs pa;
  FinetuneArgs fa;
  LinearArgs la;
  EquivarianceArgs ea;
  RenderArgs ra;
  std::vector<std::string> runs;

  auto add_common = [&common](FlagSet& f, bool with_data) {
    f.add("out", common.out, "output directory")->required();
    f.add("seed", common.seed, "random seed");
    f.app->add_option("--config", common.config, "JSON file supplying any flag; explicit flags win");
    if (with_data) {
      f.add("data", common.data, "synth | folder:PATH");
      f.add("data-seed", common.data_seed, "seed of the synthetic splits");
    }
  };

  FlagSet fp{app.add_subcommand("pretrain", "self-supervised pretraining (SwAV or SwAT)"), {}};
  add_common(fp, true);
  fp.add("method", pa.method, "swav | swat")->check(CLI::IsMember({"swav", "swat"}));
  fp.add("epochs", pa.epochs, "epochs over the pretraining set");
  fp.add("steps", pa.steps, "if > 0, total optimizer steps (overrides --epochs)");
  fp.add("batch-size", pa.batch_size, "images per batch (two views each)");
  fp.add("prototypes", pa.prototypes, "number of prototypes M");
  fp.add("dim", pa.dim, "embedding dimension d (even)");
  fp.add("temperature", pa.temperature, "softmax temperature tau");
  fp.add("sinkhorn-iters", pa.sinkhorn_iters, "Sinkhorn-Knopp rounds");
  fp.add("eps", pa.eps, "Sinkhorn entropic regularization epsilon");
  fp.add("rotation-max", pa.rotation_max, "rotation range in degrees");
  fp.add("hflip-p", pa.hflip_p, "horizontal flip probability");
  fp.add("crop-p", pa.crop_p, "crop-and-resize probability");
  fp.add("lr", pa.lr, "base learning rate");
  fp.add("weight-decay", pa.weight_decay, "weight decay");
  fp.add("warmup-epochs", pa.warmup_epochs, "linear warmup length in epochs");
  fp.add("schedule", pa.schedule, "cosine | step");
  fp.add_list("milestones", pa.milestones, "step schedule milestones in epochs");
  fp.add("activation", pa.activation, "tanh | relu");
  fp.flag("no-sinkhorn-targets", pa.no_sinkhorn_targets, "use raw scores as targets");
  fp.flag("no-data-init", pa.no_data_init, "skip data-dependent initialization");
  fp.add("log-every", pa.log_every, "step_loss logging period (0 disables)");

  FlagSet ff{app.add_subcommand("finetune", "supervised gaze finetuning of backbone and linear head"), {}};
  add_common(ff, true);
  ff.add("weights", fa.weights, "checkpoint directory or 'random'");
  ff.add("fraction", fa.fraction, "fraction of training subjects in (0, 1]");
  ff.add("epochs", fa.epochs, "finetuning epochs");
  ff.add("steps", fa.steps, "if > 0, total optimizer steps (overrides --epochs)");
  ff.add("batch-size", fa.batch_size, "images per batch");
  ff.add("lr", fa.lr, "Adam learning rate");
  ff.add("schedule", fa.schedule, "cosine | step");
  ff.add_list("milestones", fa.milestones, "step schedule milestones in epochs");
  ff.add("rotation-max", fa.rotation_max, "label-aware rotation range in degrees");
  ff.add("hflip-p", fa.hflip_p, "label-aware flip probability");
  ff.flag("no-augment", fa.no_augment, "disable label-aware augmentation");
  ff.add("dim", fa.dim, "embedding dimension for --weights random");

  FlagSet fl{app.add_subcommand("linear-eval", "linear gaze head on a frozen backbone"), {}};
  add_common(fl, true);
  fl.add("weights", la.weights, "checkpoint directory or 'random'");
  fl.add("epochs", la.epochs, "head fitting epochs");
  fl.add("lr", la.lr, "Adam learning rate for the head");
  fl.add("dim", la.dim, "embedding dimension for --weights random");

  FlagSet fe{app.add_subcommand("equivariance", "equivariance error of an encoder"), {}};
  add_common(fe, true);
  fe.add("weights", ea.weights, "checkpoint directory or 'random'");
  fe.add_list("rotations", ea.rotations, "rotation angles in degrees");
  fe.flag("no-flip", ea.no_flip, "skip the horizontal flip");
  fe.add("samples", ea.samples, "test images used");
  fe.add("dim", ea.dim, "embedding dimension for --weights random");

  FlagSet fr{app.add_subcommand("report", "aggregate metrics of several runs"), {}};
  add_common(fr, false);
  fr.echo.emplace_back("runs", [&runs] { return json(runs); });
  fr.app->add_option("--runs", runs, "glob(s) of run directories or metrics files")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->delimiter(',');

  FlagSet fg{app.add_subcommand("render", "write a synthetic labeled folder dataset"), {}};
  add_common(fg, false);
  fg.add("n", ra.n, "number of images");
  fg.add("subjects", ra.subjects, "number of subjects");
  fg.add("first-subject", ra.first_subject, "first subject id");
  fg.flag("no-labels", ra.no_labels, "write zero angles");

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = with_config(std::move(args));
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(std::move(rev));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (fp.app->parsed()) return cmd_pretrain(common, pa, fp.resolved(), out);
    if (ff.app->parsed()) return cmd_finetune(common, fa, ff.resolved(), out);
    if (fl.app->parsed()) return cmd_linear_eval(common, la, fl.resolved(), out);
    if (fe.app->parsed()) return cmd_equivariance(common, ea, fe.resolved(), out);
    if (fr.app->parsed()) return cmd_report(common, runs, fr.resolved(), out);
    if (fg.app->parsed()) return cmd_render(common, ra, fg.resolved(), out);
  } catch (const TrainingError& e) {
    err << "training aborted: " << e.what() << '\n';
    return kExitTraining;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace eqssl
