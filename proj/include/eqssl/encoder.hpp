#pragma once

// Small convolutional encoder f = projection(backbone(x)) and the linear
// gaze head, with exact reverse-mode gradients.
//
// Layouts: a batch of B images of C x H x W is a C x (B*H*W) column-major
// matrix whose column b*H*W + y*W + x holds all channels of one pixel.
// Feature batches (h, z) are B x dim matrices, one sample per row.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eqssl/errors.hpp"
#include "eqssl/image.hpp"
#include "eqssl/rng.hpp"

namespace eqssl {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Activation { relu, tanh };

inline const char* to_string(Activation a) noexcept { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct EncoderConfig {
  int input_h = 32;
  int input_w = 32;
  int input_c = 1;
  std::vector<int> conv_channels{16, 32, 64};
  int proj_hidden = 128;
  int embed_dim = 32;
  Activation activation = Activation::tanh;
  /// L2-normalize the projection output (disable only for ablations).
  bool normalize_output = true;

  int feature_dim() const { return conv_channels.back(); }

  void validate() const {
    if (input_h <= 0 || input_w <= 0 || input_c <= 0) throw ConfigError("encoder: input size must be positive");
    if (conv_channels.empty()) throw ConfigError("encoder: conv_channels must be nonempty");
    for (int c : conv_channels)
      if (c <= 0) throw ConfigError("encoder: conv channel counts must be positive");
    if (proj_hidden <= 0) throw ConfigError("encoder: proj_hidden must be positive");
    if (embed_dim <= 0 || embed_dim % 2 != 0) throw ConfigError("encoder: embed_dim must be a positive even integer");
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Dense affine map; weight is out x in.
template <typename S>
struct Dense {
  RowMat<S> weight;
  Vec<S> bias;

  void resize(long out, long in) {
    weight = RowMat<S>::Zero(out, in);
    bias = Vec<S>::Zero(out);
  }
};

/// Named view onto one parameter array (row-major storage).
template <typename S>
struct ArrayView {
  std::string name;
  std::vector<std::int64_t> shape;
  S* data;
  std::size_t size;
};

template <typename S>
struct EncoderParams {
  EncoderConfig config;
  std::uint64_t init_seed = 0;
  /// conv[l].weight is C_out x (C_in*9), i.e. [C_out, C_in, 3, 3] row-major.
  std::vector<Dense<S>> conv;
  Dense<S> proj1;
  Dense<S> proj2;

  /// Same shapes, all zeros. Used as a gradient accumulator.
  EncoderParams zeros_like() const {
    EncoderParams g = *this;
    g.for_each([](ArrayView<S> a) { std::fill(a.data, a.data + a.size, S(0)); });
    return g;
  }

  void for_each(const std::function<void(ArrayView<S>)>& f) {
    int in_c = config.input_c;
    for (std::size_t l = 0; l < conv.size(); ++l) {
      const std::string p = "conv" + std::to_string(l);
      const auto out_c = conv[l].weight.rows();
      f({p + ".weight", {out_c, in_c, 3, 3}, conv[l].weight.data(), std::size_t(conv[l].weight.size())});
      f({p + ".bias", {out_c}, conv[l].bias.data(), std::size_t(conv[l].bias.size())});
      in_c = static_cast<int>(out_c);
    }
    for (auto [p, d] : {std::pair{"proj1", &proj1}, std::pair{"proj2", &proj2}}) {
      f({std::string(p) + ".weight", {d->weight.rows(), d->weight.cols()}, d->weight.data(),
         std::size_t(d->weight.size())});
      f({std::string(p) + ".bias", {d->bias.size()}, d->bias.data(), std::size_t(d->bias.size())});
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    const_cast<EncoderParams*>(this)->for_each([&n](ArrayView<S> a) { n += a.size; });
    return n;
  }

  /// Backbone-only arrays (excludes the projection head).
  void for_each_backbone(const std::function<void(ArrayView<S>)>& f) {
    for_each([&f](ArrayView<S> a) {
      if (a.name.rfind("conv", 0) == 0) f(a);
    });
  }
};

/// Linear map from backbone features to (yaw, pitch).
template <typename S>
struct GazeHead {
  Dense<S> linear;

  GazeHead zeros_like() const {
    GazeHead g = *this;
    g.linear.weight.setZero();
    g.linear.bias.setZero();
    return g;
  }

  void for_each(const std::function<void(ArrayView<S>)>& f) {
    f({"head.weight", {linear.weight.rows(), linear.weight.cols()}, linear.weight.data(),
       std::size_t(linear.weight.size())});
    f({"head.bias", {linear.bias.size()}, linear.bias.data(), std::size_t(linear.bias.size())});
  }
};

namespace detail {

inline int conv_out(int n) noexcept { return (n - 1) / 2 + 1; }

template <typename S>
void init_dense(Dense<S>& d, long out, long in, double gain, Rng& rng) {
  d.resize(out, in);
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(in));
  for (long i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
S activate(S x, Activation a) noexcept {
  return a == Activation::relu ? (x > S(0) ? x : S(0)) : std::tanh(x);
}

/// Derivative expressed through the pre-activation value.
template <typename S>
S activate_grad(S pre, Activation a) noexcept {
  if (a == Activation::relu) return pre > S(0) ? S(1) : S(0);
  const S t = std::tanh(pre);
  return S(1) - t * t;
}

struct ConvGeometry {
  int in_c, in_h, in_w, out_c, out_h, out_w;
};

/// 3x3 stride-2 pad-1 patches: (in_c*9) x (B*out_h*out_w).
template <typename S>
Mat<S> im2col(const Mat<S>& x, const ConvGeometry& g, long batch) {
  const long out_hw = long(g.out_h) * g.out_w;
  const long in_hw = long(g.in_h) * g.in_w;
  Mat<S> cols = Mat<S>::Zero(long(g.in_c) * 9, batch * out_hw);
  for (long b = 0; b < batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        S* dst = cols.data() + (b * out_hw + long(oy) * g.out_w + ox) * cols.rows();
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            const S* src = x.data() + (b * in_hw + long(iy) * g.in_w + ix) * g.in_c;
            for (int c = 0; c < g.in_c; ++c) dst[c * 9 + ky * 3 + kx] = src[c];
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col.
template <typename S>
Mat<S> col2im(const Mat<S>& cols, const ConvGeometry& g, long batch) {
  const long out_hw = long(g.out_h) * g.out_w;
  const long in_hw = long(g.in_h) * g.in_w;
  Mat<S> x = Mat<S>::Zero(g.in_c, batch * in_hw);
  for (long b = 0; b < batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const S* src = cols.data() + (b * out_hw + long(oy) * g.out_w + ox) * cols.rows();
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            S* dst = x.data() + (b * in_hw + long(iy) * g.in_w + ix) * g.in_c;
            for (int c = 0; c < g.in_c; ++c) dst[c] += src[c * 9 + ky * 3 + kx];
          }
        }
      }
    }
  }
  return x;
}

inline std::vector<ConvGeometry> conv_geometry(const EncoderConfig& cfg) {
  std::vector<ConvGeometry> out;
  int c = cfg.input_c, h = cfg.input_h, w = cfg.input_w;
  for (int oc : cfg.conv_channels) {
    out.push_back({c, h, w, oc, conv_out(h), conv_out(w)});
    c = oc;
    h = conv_out(h);
    w = conv_out(w);
  }
  return out;
}

}  // namespace detail

/// Fan-in scaled uniform weights (gain sqrt(2) for relu, 1 for tanh), zero biases,
/// zero-sum first-layer filters.
template <typename S>
EncoderParams<S> init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderParams<S> p;
  p.config = cfg;
  p.init_seed = seed;
  Rng rng(seed);
  const double gain = cfg.activation == Activation::relu ? std::sqrt(2.0) : 1.0;
  int in_c = cfg.input_c;
  for (int oc : cfg.conv_channels) {
    p.conv.emplace_back();
    detail::init_dense(p.conv.back(), oc, long(in_c) * 9, gain, rng);
    in_c = oc;
  }
  // First-layer filters start with zero sum so that the (large, shared)
  // mean intensity of the input does not dominate every feature.
  auto& w0 = p.conv.front().weight;
  for (Eigen::Index r = 0; r < w0.rows(); ++r) w0.row(r).array() -= w0.row(r).mean();
  detail::init_dense(p.proj1, cfg.proj_hidden, cfg.feature_dim(), gain, rng);
  detail::init_dense(p.proj2, cfg.embed_dim, cfg.proj_hidden, 1.0, rng);
  return p;
}

template <typename S>
GazeHead<S> init_gaze_head(int feature_dim, std::uint64_t seed) {
  GazeHead<S> h;
  Rng rng(seed);
  detail::init_dense(h.linear, 2, feature_dim, 1.0, rng);
  return h;
}

namespace detail {

/// Rescales rows of (weight, bias) so the given pre-activations (rows =
/// units, cols = observations) become zero-mean, unit-variance per unit.
template <typename S, typename PreAct>
void standardize_unit(Dense<S>& d, const PreAct& pre) {
  const long n = pre.cols();
  for (long u = 0; u < pre.rows(); ++u) {
    const double mean = static_cast<double>(pre.row(u).sum()) / double(n);
    const double var = static_cast<double>((pre.row(u).array() - S(mean)).square().sum()) / double(n);
    const double sd = std::sqrt(var) + 1e-6;
    d.weight.row(u) /= static_cast<S>(sd);
    d.bias[u] = static_cast<S>((double(d.bias[u]) - mean) / sd);
  }
}

}  // namespace detail

/// Packs images into the C x (B*H*W) batch layout after checking their size.
template <typename S>
Mat<S> pack_images(const std::vector<const Image*>& images, const EncoderConfig& cfg) {
  if (images.empty()) throw ArgumentError("pack_images: empty batch");
  const long hw = long(cfg.input_h) * cfg.input_w;
  Mat<S> x(cfg.input_c, long(images.size()) * hw);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.height != cfg.input_h || img.width != cfg.input_w || img.channels != cfg.input_c)
      throw ArgumentError("pack_images: image " + std::to_string(b) + " is " + std::to_string(img.height) + "x" +
                          std::to_string(img.width) + "x" + std::to_string(img.channels) + ", expected " +
                          std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) + "x" +
                          std::to_string(cfg.input_c));
    for (long i = 0; i < hw; ++i)
      for (int c = 0; c < cfg.input_c; ++c) x(c, long(b) * hw + i) = static_cast<S>(img.pixels[c * hw + i]);
  }
  return x;
}

template <typename S>
Mat<S> pack_images(const std::vector<Image>& images, const EncoderConfig& cfg) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& i : images) ptrs.push_back(&i);
  return pack_images<S>(ptrs, cfg);
}

template <typename S>
struct BackboneTape {
  long batch = 0;
  std::vector<Mat<S>> cols;
  std::vector<Mat<S>> pre;
};

/// Conv blocks then global average pooling. Returns B x feature_dim.
template <typename S>
Mat<S> forward_backbone(const EncoderParams<S>& p, const Mat<S>& x, BackboneTape<S>* tape = nullptr) {
  const auto& cfg = p.config;
  const long in_hw = long(cfg.input_h) * cfg.input_w;
  if (x.rows() != cfg.input_c || x.cols() == 0 || x.cols() % in_hw != 0)
    throw ArgumentError("forward_backbone: input does not match the configured image size");
  const long batch = x.cols() / in_hw;
  const auto geo = detail::conv_geometry(cfg);
  if (tape) {
    tape->batch = batch;
    tape->cols.clear();
    tape->pre.clear();
  }
  Mat<S> act = x;
  for (std::size_t l = 0; l < geo.size(); ++l) {
    Mat<S> cols = detail::im2col(act, geo[l], batch);
    Mat<S> pre = p.conv[l].weight * cols;
    pre.colwise() += p.conv[l].bias;
    act = pre.unaryExpr([a = cfg.activation](S v) { return detail::activate(v, a); });
    if (tape) {
      tape->cols.push_back(std::move(cols));
      tape->pre.push_back(std::move(pre));
    }
  }
  const auto& last = geo.back();
  const long out_hw = long(last.out_h) * last.out_w;
  Mat<S> h(batch, last.out_c);
  for (long b = 0; b < batch; ++b) h.row(b) = act.middleCols(b * out_hw, out_hw).rowwise().mean().transpose();
  return h;
}

/// Accumulates parameter gradients of the backbone given dL/dh.
template <typename S>
void backward_backbone(const EncoderParams<S>& p, const BackboneTape<S>& tape, const Mat<S>& dh,
                       EncoderParams<S>& grad) {
  const auto geo = detail::conv_geometry(p.config);
  const long batch = tape.batch;
  const auto& last = geo.back();
  const long out_hw = long(last.out_h) * last.out_w;
  Mat<S> dact(last.out_c, batch * out_hw);
  for (long b = 0; b < batch; ++b)
    dact.middleCols(b * out_hw, out_hw).colwise() = dh.row(b).transpose() / static_cast<S>(out_hw);
  for (long l = long(geo.size()) - 1; l >= 0; --l) {
    const Mat<S>& pre = tape.pre[std::size_t(l)];
    Mat<S> dpre = dact.cwiseProduct(
        pre.unaryExpr([a = p.config.activation](S v) { return detail::activate_grad(v, a); }));
    grad.conv[std::size_t(l)].weight.noalias() += dpre * tape.cols[std::size_t(l)].transpose();
    grad.conv[std::size_t(l)].bias += dpre.rowwise().sum();
    if (l > 0) {
      Mat<S> dcols = p.conv[std::size_t(l)].weight.transpose() * dpre;
      dact = detail::col2im(dcols, geo[std::size_t(l)], batch);
    }
  }
}

template <typename S>
struct ProjectionTape {
  Mat<S> h;
  Mat<S> a1;
  Mat<S> q1;
  Mat<S> a2;
  Vec<S> norms;
  Mat<S> z;
};

inline constexpr double kNormEps = 1e-12;

/// Two dense layers with a nonlinearity between, then row-wise L2 normalization.
template <typename S>
Mat<S> forward_projection(const EncoderParams<S>& p, const Mat<S>& h, ProjectionTape<S>* tape = nullptr) {
  if (h.cols() != p.config.feature_dim()) throw ArgumentError("forward_projection: feature size mismatch");
  Mat<S> a1 = h * p.proj1.weight.transpose();
  a1.rowwise() += p.proj1.bias.transpose();
  Mat<S> q1 = a1.unaryExpr([a = p.config.activation](S v) { return detail::activate(v, a); });
  Mat<S> a2 = q1 * p.proj2.weight.transpose();
  a2.rowwise() += p.proj2.bias.transpose();
  Vec<S> norms = Vec<S>::Ones(a2.rows());
  Mat<S> z = a2;
  if (p.config.normalize_output) {
    norms = a2.rowwise().norm().array() + static_cast<S>(kNormEps);
    z = a2.array().colwise() / norms.array();
  }
  if (tape) *tape = {h, std::move(a1), std::move(q1), std::move(a2), std::move(norms), z};
  return z;
}

/// Accumulates projection gradients given dL/dz and returns dL/dh.
template <typename S>
Mat<S> backward_projection(const EncoderParams<S>& p, const ProjectionTape<S>& t, const Mat<S>& dz,
                           EncoderParams<S>& grad) {
  Mat<S> da2 = dz;
  if (p.config.normalize_output) {
    const Vec<S> proj = (dz.cwiseProduct(t.z)).rowwise().sum();
    const Mat<S> radial = t.z.array().colwise() * proj.array();
    da2 = (dz - radial).array().colwise() / t.norms.array();
  }
  grad.proj2.weight.noalias() += da2.transpose() * t.q1;
  grad.proj2.bias += da2.colwise().sum().transpose();
  Mat<S> dq1 = da2 * p.proj2.weight;
  Mat<S> da1 = dq1.cwiseProduct(t.a1.unaryExpr([a = p.config.activation](S v) { return detail::activate_grad(v, a); }));
  grad.proj1.weight.noalias() += da1.transpose() * t.h;
  grad.proj1.bias += da1.colwise().sum().transpose();
  return da1 * p.proj1.weight;
}

/// B x 2 predictions, columns (yaw, pitch).
template <typename S>
Mat<S> forward_gaze_head(const GazeHead<S>& head, const Mat<S>& h) {
  if (h.cols() != head.linear.weight.cols()) throw ArgumentError("forward_gaze_head: feature size mismatch");
  Mat<S> g = h * head.linear.weight.transpose();
  g.rowwise() += head.linear.bias.transpose();
  return g;
}

/// Accumulates head gradients given dL/dg and returns dL/dh.
template <typename S>
Mat<S> backward_gaze_head(const GazeHead<S>& head, const Mat<S>& h, const Mat<S>& dg, GazeHead<S>& grad) {
  grad.linear.weight.noalias() += dg.transpose() * h;
  grad.linear.bias += dg.colwise().sum().transpose();
  return dg * head.linear.weight;
}

/// Projection output for a batch: backbone then projection.
template <typename S>
Mat<S> encode(const EncoderParams<S>& p, const Mat<S>& x) {
  return forward_projection(p, forward_backbone(p, x));
}

/// Data-dependent initialization: layer by layer, rescales each unit's
/// weights and bias so that its pre-activation over the calibration batch
/// `x` has zero mean and unit variance (the final projection layer included).
template <typename S>
void calibrate_encoder(EncoderParams<S>& p, const Mat<S>& x) {
  const auto geo = detail::conv_geometry(p.config);
  const long in_hw = long(p.config.input_h) * p.config.input_w;
  if (x.rows() != p.config.input_c || x.cols() == 0 || x.cols() % in_hw != 0)
    throw ArgumentError("calibrate_encoder: input does not match the configured image size");
  const long batch = x.cols() / in_hw;
  const auto act = p.config.activation;
  Mat<S> a = x;
  for (std::size_t l = 0; l < geo.size(); ++l) {
    const Mat<S> cols = detail::im2col(a, geo[l], batch);
    Mat<S> pre = p.conv[l].weight * cols;
    pre.colwise() += p.conv[l].bias;
    detail::standardize_unit(p.conv[l], pre);
    pre = p.conv[l].weight * cols;
    pre.colwise() += p.conv[l].bias;
    a = pre.unaryExpr([act](S v) { return detail::activate(v, act); });
  }
  const Mat<S> h = forward_backbone(p, x);
  Mat<S> a1 = h * p.proj1.weight.transpose();
  a1.rowwise() += p.proj1.bias.transpose();
  detail::standardize_unit(p.proj1, a1.transpose());
  a1 = h * p.proj1.weight.transpose();
  a1.rowwise() += p.proj1.bias.transpose();
  const Mat<S> q1 = a1.unaryExpr([act](S v) { return detail::activate(v, act); });
  Mat<S> a2 = q1 * p.proj2.weight.transpose();
  a2.rowwise() += p.proj2.bias.transpose();
  detail::standardize_unit(p.proj2, a2.transpose());
}

/// Throws TrainingError naming the first array holding a non-finite value.
template <typename Params>
void require_finite(Params& grads, long step) {
  grads.for_each([step](auto a) {
    for (std::size_t i = 0; i < a.size; ++i)
      if (!std::isfinite(static_cast<double>(a.data[i])))
        throw TrainingError("non-finite gradient in '" + a.name + "'", step);
  });
}

}  // namespace eqssl
