#pragma once

// Pretraining (SwAV / SwAT), supervised finetuning with an L1 gaze loss and
// linear evaluation on a frozen backbone.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "eqssl/affine.hpp"
#include "eqssl/augment.hpp"
#include "eqssl/checkpoint.hpp"
#include "eqssl/clustering.hpp"
#include "eqssl/config_json.hpp"
#include "eqssl/data.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/evalkit.hpp"
#include "eqssl/metrics.hpp"
#include "eqssl/optim.hpp"
#include "eqssl/rng.hpp"

namespace eqssl {

enum class Method { swav, swat, supervised };

inline const char* to_string(Method m) noexcept {
  switch (m) {
    case Method::swav:
      return "swav";
    case Method::swat:
      return "swat";
    case Method::supervised:
      return "supervised";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "swav") return Method::swav;
  if (s == "swat") return Method::swat;
  if (s == "supervised") return Method::supervised;
  throw ConfigError("unknown method '" + s + "'");
}

struct TrainConfig {
  Method method = Method::swat;
  long epochs = 30;
  /// When positive, overrides epochs * steps_per_epoch.
  long max_steps = 0;
  int batch_size = 64;
  double lr = 0.03;
  /// Cosine schedule ends at lr * final_lr_ratio.
  double final_lr_ratio = 1e-3;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  /// Data-dependent initialization on a batch of training images.
  bool data_init = true;
  int data_init_batch = 256;
  /// LARS trust coefficient for pretraining; 0 gives plain momentum SGD.
  double lars_trust = 0.0;
  long warmup_epochs = 1;
  LrSchedule lr_schedule = LrSchedule::cosine;
  std::vector<long> step_milestones;  // epochs
  std::uint64_t seed = 0;
  /// Prototypes receive no updates for this many initial steps.
  long freeze_prototypes_steps = 0;
  ClusterConfig cluster;
  CatalogConfig catalog;
  EncoderConfig encoder;
  /// Finetuning: label-aware flip/rotation augmentation.
  bool augment = true;
  /// Emit a step_loss record every this many steps (0 disables).
  long log_every = 50;
  unsigned workers = 0;

  void validate() const {
    if (epochs < 0 || max_steps < 0) throw ConfigError("train: epochs and max_steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (method != Method::supervised && batch_size < 2)
      throw ConfigError("train: pretraining needs batch_size >= 2");
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (warmup_epochs < 0) throw ConfigError("train: warmup_epochs must be >= 0");
    cluster.validate();
    catalog.validate();
    encoder.validate();
  }
};

inline nlohmann::json to_json_config(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"final_lr_ratio", c.final_lr_ratio},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"lars_trust", c.lars_trust},
          {"data_init", c.data_init},
          {"data_init_batch", c.data_init_batch},
          {"warmup_epochs", c.warmup_epochs},
          {"lr_schedule", c.lr_schedule == LrSchedule::cosine ? "cosine" : "step"},
          {"step_milestones", c.step_milestones},
          {"seed", c.seed},
          {"freeze_prototypes_steps", c.freeze_prototypes_steps},
          {"cluster", c.cluster},
          {"catalog", c.catalog},
          {"encoder", c.encoder},
          {"augment", c.augment},
          {"log_every", c.log_every}};
}

namespace detail {

inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, long epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(hash_seed(seed ^ 0xe90c4ULL, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = 0; i + 1 < n; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
  return perm;
}

/// Runs f(i) for i in [0, n) on `workers` threads (inline when <= 1).
template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) f(i);
    });
  for (auto& t : pool) t.join();
}

inline std::uint64_t view_seed(std::uint64_t seed, long step, std::size_t i) {
  return hash_seed(hash_seed(seed, static_cast<std::uint64_t>(step)), i);
}

/// Calibration batch: up to `count` images chosen by `seed`, unaugmented.
inline Mat<Real> calibration_batch(const DatasetHandle& ds, const EncoderConfig& enc, int count, std::uint64_t seed) {
  const auto perm = epoch_permutation(ds.size(), seed ^ 0xca1b, 0);
  std::vector<const Image*> imgs;
  for (std::size_t i = 0; i < std::min<std::size_t>(ds.size(), std::size_t(std::max(count, 1))); ++i)
    imgs.push_back(&ds.samples[perm[i]].image);
  return pack_images<Real>(imgs, enc);
}

inline void require_finite_loss(double loss, long step) {
  if (!std::isfinite(loss)) throw TrainingError("non-finite loss at step " + std::to_string(step), step);
}

inline void store_optimizer_state(Checkpoint& c, const std::vector<ArrayView<Real>>& params,
                                  const std::vector<std::vector<Real>>& state) {
  c.optimizer_state.clear();
  for (std::size_t k = 0; k < state.size() && k < params.size(); ++k)
    c.optimizer_state["opt." + params[k].name] = state[k];
}

}  // namespace detail

/// Untrained encoder as pretraining would start it: seeded init, then
/// (optionally) data-dependent calibration on images of `ds`.
inline EncoderParams<Real> random_encoder(const TrainConfig& cfg, const DatasetHandle& ds) {
  EncoderParams<Real> enc = init_encoder<Real>(cfg.encoder, hash_seed(cfg.seed, 1));
  if (cfg.data_init && !ds.empty())
    calibrate_encoder(enc, detail::calibration_batch(ds, cfg.encoder, cfg.data_init_batch, cfg.seed));
  return enc;
}

struct PretrainResult {
  Checkpoint checkpoint;
  /// Loss of every optimization step.
  std::vector<double> step_losses;
};

struct PretrainOptions {
  MetricsLog* log = nullptr;
  /// When set, the checkpoint is (atomically) rewritten here after every
  /// epoch and at the end, so an abort leaves the last good one in place.
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Two views per image, one shared forward pass, swapped-prediction loss
/// (transform-swapped for SwAT), SGD with momentum, prototype renormalization.
inline PretrainResult pretrain(const TrainConfig& cfg, const DatasetHandle& ds, const PretrainOptions& opt = {}) {
  cfg.validate();
  if (cfg.method == Method::supervised) throw ConfigError("pretrain: method must be swav or swat");
  if (ds.empty()) throw ArgumentError("pretrain: empty dataset");

  PretrainResult res;
  Checkpoint& ckpt = res.checkpoint;
  ckpt.encoder = random_encoder(cfg, ds);
  ckpt.prototypes = init_prototypes<Real>(cfg.encoder.embed_dim, cfg.cluster.prototypes, hash_seed(cfg.seed, 2));
  ckpt.seed = cfg.seed;
  ckpt.config = to_json_config(cfg);

  const std::size_t n = ds.size();
  const std::size_t batch = std::min<std::size_t>(std::size_t(cfg.batch_size), n);
  if (batch < 2) throw ConfigError("pretrain: need at least two images per batch");
  const long steps_per_epoch = long(std::max<std::size_t>(1, n / batch));
  const long total = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;

  LrScheduler sched;
  sched.base_lr = cfg.lr;
  sched.final_lr = cfg.lr * cfg.final_lr_ratio;
  sched.warmup_steps = std::min(total, cfg.warmup_epochs * steps_per_epoch);
  sched.total_steps = std::max<long>(total, 1);
  sched.schedule = cfg.lr_schedule;
  for (long e : cfg.step_milestones) sched.milestones.push_back(e * steps_per_epoch);

  Sgd<Real> sgd(cfg.momentum, cfg.weight_decay, cfg.lars_trust);
  auto params = views_of<Real>(ckpt.encoder);
  for (auto& v : views_of<Real>(ckpt.prototypes)) params.push_back(v);

  auto save = [&](long step) {
    ckpt.step = step;
    detail::store_optimizer_state(ckpt, params, sgd.state());
    if (opt.checkpoint_dir) save_checkpoint(ckpt, *opt.checkpoint_dir);
  };
  if (total == 0) {
    save(0);
    return res;
  }

  std::vector<std::size_t> perm;
  std::vector<Image> views(2 * batch);
  std::vector<AffineTransform2D> t1(batch), t2(batch);
  double epoch_loss = 0.0;
  long epoch_steps = 0;
  for (long step = 0; step < total; ++step) {
    const long epoch = step / steps_per_epoch;
    const long pos = step % steps_per_epoch;
    if (pos == 0) perm = detail::epoch_permutation(n, cfg.seed, epoch);

    detail::parallel_for(batch, cfg.workers, [&](std::size_t i) {
      const Image& img = ds.samples[perm[std::size_t(pos) * batch + i]].image;
      Rng rng(detail::view_seed(cfg.seed, step, i));
      const TransformSpec s1 = sample_transform(cfg.catalog, rng);
      const TransformSpec s2 = sample_transform(cfg.catalog, rng);
      views[i] = apply_to_image(s1, img);
      views[batch + i] = apply_to_image(s2, img);
      t1[i] = geometric_part(s1);
      t2[i] = geometric_part(s2);
    });

    const Mat<Real> x = pack_images<Real>(views, cfg.encoder);
    BackboneTape<Real> btape;
    ProjectionTape<Real> ptape;
    const Mat<Real> h = forward_backbone(ckpt.encoder, x, &btape);
    const Mat<Real> z = forward_projection(ckpt.encoder, h, &ptape);
    const Mat<Real> z1 = z.topRows(long(batch));
    const Mat<Real> z2 = z.bottomRows(long(batch));
    const LossResult<Real> lr = cfg.method == Method::swat
                                    ? swat_loss(z1, z2, t1, t2, ckpt.prototypes, cfg.cluster)
                                    : swav_loss(z1, z2, ckpt.prototypes, cfg.cluster);
    detail::require_finite_loss(lr.loss, step);

    Mat<Real> dz(z.rows(), z.cols());
    dz << lr.dz1, lr.dz2;
    EncoderParams<Real> grad = ckpt.encoder.zeros_like();
    const Mat<Real> dh = backward_projection(ckpt.encoder, ptape, dz, grad);
    backward_backbone(ckpt.encoder, btape, dh, grad);
    require_finite(grad, step);
    PrototypeBank<Real> pgrad{lr.dP};
    if (step < cfg.freeze_prototypes_steps) pgrad.P.setZero();
    require_finite(pgrad, step);

    auto grads = views_of<Real>(grad);
    for (auto& v : views_of<Real>(pgrad)) grads.push_back(v);
    sgd.step(params, grads, sched.at(step));
    if (cfg.cluster.normalize_prototypes) ckpt.prototypes.normalize();

    res.step_losses.push_back(lr.loss);
    epoch_loss += lr.loss;
    ++epoch_steps;
    if (opt.log && cfg.log_every > 0 && step % cfg.log_every == 0)
      opt.log->write({step, epoch, "train", "step_loss", lr.loss, cfg.seed, to_string(cfg.method)});
    if (pos == steps_per_epoch - 1 || step == total - 1) {
      if (opt.log)
        opt.log->write({step, epoch, "train", "loss", epoch_loss / double(epoch_steps), cfg.seed,
                        to_string(cfg.method)});
      epoch_loss = 0.0;
      epoch_steps = 0;
      save(step + 1);
    }
  }
  return res;
}

/// Mean over samples of |yaw error| + |pitch error|.
template <typename S>
double gaze_l1_loss(const Mat<S>& pred, const Mat<S>& target, Mat<S>* dpred = nullptr) {
  if (pred.rows() != target.rows() || pred.cols() != 2 || target.cols() != 2)
    throw ArgumentError("gaze_l1_loss: expected matching B x 2 matrices");
  const Mat<S> diff = pred - target;
  if (dpred) *dpred = diff.unaryExpr([](S v) { return S((v > S(0)) - (v < S(0))); }) / static_cast<S>(pred.rows());
  return static_cast<double>(diff.cwiseAbs().sum()) / double(pred.rows());
}

template <typename S>
Mat<S> labels_matrix(const DatasetHandle& ds) {
  Mat<S> y(long(ds.size()), 2);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.samples[i].label) throw ArgumentError("labels_matrix: sample " + std::to_string(i) + " is unlabeled");
    y(long(i), 0) = static_cast<S>(ds.samples[i].label->yaw);
    y(long(i), 1) = static_cast<S>(ds.samples[i].label->pitch);
  }
  return y;
}

/// Backbone features of every sample, B x feature_dim, in dataset order.
inline Mat<Real> extract_features(const EncoderParams<Real>& enc, const DatasetHandle& ds, std::size_t chunk = 256) {
  if (ds.empty()) throw ArgumentError("extract_features: empty dataset");
  Mat<Real> out(long(ds.size()), enc.config.feature_dim());
  for (std::size_t s = 0; s < ds.size(); s += chunk) {
    std::vector<const Image*> imgs;
    for (std::size_t i = s; i < std::min(ds.size(), s + chunk); ++i) imgs.push_back(&ds.samples[i].image);
    out.middleRows(long(s), long(imgs.size())) = forward_backbone(enc, pack_images<Real>(imgs, enc.config));
  }
  return out;
}

inline double mean_angular_error(const Mat<Real>& pred, const Mat<Real>& target) {
  double acc = 0.0;
  for (long i = 0; i < pred.rows(); ++i)
    acc += angular_error({target(i, 0), target(i, 1)}, {pred(i, 0), pred(i, 1)});
  return pred.rows() ? acc / double(pred.rows()) : 0.0;
}

struct FinetuneResult {
  EncoderParams<Real> encoder;
  GazeHead<Real> head;
  std::vector<double> test_errors;  // per epoch, degrees
  double final_test_error = 0.0;
};

/// Trains backbone and linear head end-to-end with Adam on the L1 gaze loss,
/// evaluating mean angular error on `test` after every epoch.
inline FinetuneResult finetune(const EncoderParams<Real>& init, const DatasetHandle& train, const DatasetHandle& test,
                               const TrainConfig& cfg, MetricsLog* log = nullptr) {
  cfg.validate();
  if (train.empty() || !train.labeled()) throw ArgumentError("finetune: training set must be labeled and nonempty");
  if (test.empty() || !test.labeled()) throw ArgumentError("finetune: test set must be labeled and nonempty");

  FinetuneResult res{init, init_gaze_head<Real>(init.config.feature_dim(), hash_seed(cfg.seed, 3)), {}, 0.0};
  const std::size_t n = train.size();
  const std::size_t batch = std::min<std::size_t>(std::size_t(cfg.batch_size), n);
  const long steps_per_epoch = long(std::max<std::size_t>(1, n / batch));
  const long total = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;

  LrScheduler sched;
  sched.base_lr = cfg.lr;
  sched.final_lr = cfg.lr * cfg.final_lr_ratio;
  sched.warmup_steps = std::min(total, cfg.warmup_epochs * steps_per_epoch);
  sched.total_steps = std::max<long>(total, 1);
  sched.schedule = cfg.lr_schedule;
  for (long e : cfg.step_milestones) sched.milestones.push_back(e * steps_per_epoch);

  Adam<Real> adam(0.9, 0.999, 1e-8, cfg.weight_decay);
  std::vector<ArrayView<Real>> params;
  res.encoder.for_each_backbone([&params](ArrayView<Real> a) { params.push_back(a); });
  for (auto& v : views_of<Real>(res.head)) params.push_back(v);

  const Mat<Real> test_y = labels_matrix<Real>(test);
  auto evaluate = [&] {
    return mean_angular_error(forward_gaze_head(res.head, extract_features(res.encoder, test)), test_y);
  };

  std::vector<std::size_t> perm;
  std::vector<Image> imgs(batch);
  Mat<Real> y(long(batch), 2);
  double epoch_loss = 0.0;
  long epoch_steps = 0;
  for (long step = 0; step < total; ++step) {
    const long epoch = step / steps_per_epoch;
    const long pos = step % steps_per_epoch;
    if (pos == 0) perm = detail::epoch_permutation(n, cfg.seed, epoch);
    detail::parallel_for(batch, cfg.workers, [&](std::size_t i) {
      const Sample& s = train.samples[perm[std::size_t(pos) * batch + i]];
      GazeLabel g = *s.label;
      if (cfg.augment) {
        Rng rng(detail::view_seed(cfg.seed, step, i));
        const bool flip = rng.bernoulli(cfg.catalog.hflip_p);
        const double theta = rng.uniform(-cfg.catalog.rotation_max_rad, cfg.catalog.rotation_max_rad);
        const bool rotate = rng.bernoulli(cfg.catalog.rotation_p);
        const TransformSpec spec = geometric_spec(flip, rotate ? theta : 0.0);
        imgs[i] = apply_to_image(spec, s.image);
        g = transform_gaze_label(geometric_part(spec), g);
      } else {
        imgs[i] = s.image;
      }
      y(long(i), 0) = static_cast<Real>(g.yaw);
      y(long(i), 1) = static_cast<Real>(g.pitch);
    });

    BackboneTape<Real> tape;
    const Mat<Real> h = forward_backbone(res.encoder, pack_images<Real>(imgs, cfg.encoder), &tape);
    const Mat<Real> pred = forward_gaze_head(res.head, h);
    Mat<Real> dpred;
    const double loss = gaze_l1_loss(pred, y, &dpred);
    detail::require_finite_loss(loss, step);

    EncoderParams<Real> egrad = res.encoder.zeros_like();
    GazeHead<Real> hgrad = res.head.zeros_like();
    const Mat<Real> dh = backward_gaze_head(res.head, h, dpred, hgrad);
    backward_backbone(res.encoder, tape, dh, egrad);
    require_finite(egrad, step);
    std::vector<ArrayView<Real>> grads;
    egrad.for_each_backbone([&grads](ArrayView<Real> a) { grads.push_back(a); });
    for (auto& v : views_of<Real>(hgrad)) grads.push_back(v);
    adam.step(params, grads, sched.at(step));

    epoch_loss += loss;
    ++epoch_steps;
    if (pos == steps_per_epoch - 1 || step == total - 1) {
      const double err = evaluate();
      res.test_errors.push_back(err);
      if (log) {
        log->write({step, epoch, "train", "l1_loss", epoch_loss / double(epoch_steps), cfg.seed,
                    to_string(cfg.method)});
        log->write({step, epoch, "test", "angular_error_deg", err, cfg.seed, to_string(cfg.method)});
      }
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
  }
  res.final_test_error = res.test_errors.empty() ? evaluate() : res.test_errors.back();
  return res;
}

struct LinearFitConfig {
  long epochs = 200;
  int batch_size = 256;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Fits a linear head on fixed features with Adam on the L1 gaze loss.
/// Features are standardized during fitting; the returned head is folded
/// back so that it applies to raw features.
inline GazeHead<Real> fit_linear_head(const Mat<Real>& features, const Mat<Real>& targets,
                                      const LinearFitConfig& cfg) {
  if (features.rows() != targets.rows() || features.rows() == 0)
    throw ArgumentError("fit_linear_head: features and targets must have the same nonzero row count");
  const long n = features.rows();
  const long dim = features.cols();
  const Vec<Real> mean = features.colwise().mean().transpose();
  Vec<Real> stdev = ((features.rowwise() - mean.transpose()).array().square().colwise().sum() / Real(n))
                        .sqrt()
                        .transpose();
  for (long k = 0; k < dim; ++k)
    if (!(stdev[k] > Real(1e-8))) stdev[k] = Real(1);
  const Mat<Real> xs = (features.rowwise() - mean.transpose()).array().rowwise() / stdev.transpose().array();

  GazeHead<Real> head = init_gaze_head<Real>(int(dim), hash_seed(cfg.seed, 4));
  head.linear.weight.setZero();
  Adam<Real> adam;
  auto params = views_of<Real>(head);
  const long batch = std::min<long>(cfg.batch_size, n);
  const long steps_per_epoch = std::max<long>(1, n / batch);
  LrScheduler sched{cfg.lr, cfg.lr * 1e-2, 0, cfg.epochs * steps_per_epoch, LrSchedule::cosine, {}, 0.1};
  long step = 0;
  Mat<Real> xb(batch, dim), yb(batch, 2);
  for (long e = 0; e < cfg.epochs; ++e) {
    const auto perm = detail::epoch_permutation(std::size_t(n), cfg.seed, e);
    for (long s = 0; s < steps_per_epoch; ++s, ++step) {
      for (long i = 0; i < batch; ++i) {
        xb.row(i) = xs.row(long(perm[std::size_t(s * batch + i)]));
        yb.row(i) = targets.row(long(perm[std::size_t(s * batch + i)]));
      }
      const Mat<Real> pred = forward_gaze_head(head, xb);
      Mat<Real> dpred;
      gaze_l1_loss(pred, yb, &dpred);
      GazeHead<Real> g = head.zeros_like();
      backward_gaze_head(head, xb, dpred, g);
      adam.step(params, views_of<Real>(g), sched.at(step));
    }
  }
  GazeHead<Real> raw = head;
  raw.linear.weight = head.linear.weight.array().rowwise() / stdev.transpose().array();
  raw.linear.bias = head.linear.bias - raw.linear.weight * mean;
  return raw;
}

struct LinearEvalResult {
  GazeHead<Real> head;
  double train_error = 0.0;
  double test_error = 0.0;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

/// Frozen backbone, trained linear head; errors are mean angular degrees.
inline LinearEvalResult linear_eval(const EncoderParams<Real>& encoder, const DatasetHandle& train,
                                    const DatasetHandle& test, const LinearFitConfig& cfg, MetricsLog* log = nullptr,
                                    const std::string& method = "linear") {
  if (train.empty() || !train.labeled() || test.empty() || !test.labeled())
    throw ArgumentError("linear_eval: train and test sets must be labeled and nonempty");
  auto& enc = const_cast<EncoderParams<Real>&>(encoder);
  std::vector<ArrayView<Real>> backbone;
  enc.for_each_backbone([&backbone](ArrayView<Real> a) { backbone.push_back(a); });

  LinearEvalResult r;
  r.backbone_hash_before = hash_arrays(backbone);
  const Mat<Real> htrain = extract_features(encoder, train);
  const Mat<Real> htest = extract_features(encoder, test);
  const Mat<Real> ytrain = labels_matrix<Real>(train);
  const Mat<Real> ytest = labels_matrix<Real>(test);
  r.head = fit_linear_head(htrain, ytrain, cfg);
  r.train_error = mean_angular_error(forward_gaze_head(r.head, htrain), ytrain);
  r.test_error = mean_angular_error(forward_gaze_head(r.head, htest), ytest);
  r.backbone_hash_after = hash_arrays(backbone);
  if (log) {
    log->write({0, cfg.epochs, "train", "angular_error_deg", r.train_error, cfg.seed, method});
    log->write({0, cfg.epochs, "test", "angular_error_deg", r.test_error, cfg.seed, method});
  }
  return r;
}

}  // namespace eqssl
