#pragma once

// Prototype bank, Sinkhorn-Knopp equipartition and the swapped-prediction
// losses (invariant SwAV form and the transform-swapping SwAT form).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "eqssl/affine.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/ftl.hpp"
#include "eqssl/rng.hpp"

namespace eqssl {

struct ClusterConfig {
  int prototypes = 32;
  double temperature = 0.5;
  double sinkhorn_eps = 0.05;
  int sinkhorn_iters = 3;
  /// false: use the raw transformed scores z~ P as targets instead of
  /// Sinkhorn assignments.
  bool sinkhorn_targets = true;
  bool normalize_prototypes = true;

  void validate() const {
    if (prototypes < 1) throw ConfigError("cluster: prototypes must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("cluster: temperature must be > 0");
    if (!(sinkhorn_eps > 0.0)) throw ConfigError("cluster: sinkhorn eps must be > 0");
    if (sinkhorn_iters < 1) throw ConfigError("cluster: sinkhorn iterations must be >= 1");
  }

  bool operator==(const ClusterConfig&) const = default;
};

/// d x M matrix whose columns are the prototypes.
template <typename S>
struct PrototypeBank {
  RowMat<S> P;

  int dim() const noexcept { return int(P.rows()); }
  int count() const noexcept { return int(P.cols()); }

  void normalize() {
    for (Eigen::Index m = 0; m < P.cols(); ++m) {
      const S n = P.col(m).norm();
      if (n > S(0)) P.col(m) /= n;
    }
  }

  void for_each(const std::function<void(ArrayView<S>)>& f) {
    f({"prototypes", {P.rows(), P.cols()}, P.data(), std::size_t(P.size())});
  }
};

template <typename S>
PrototypeBank<S> init_prototypes(int dim, int count, std::uint64_t seed) {
  if (dim <= 0 || count <= 0) throw ConfigError("prototypes: dimension and count must be positive");
  PrototypeBank<S> bank;
  bank.P.resize(dim, count);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < bank.P.size(); ++i) bank.P.data()[i] = static_cast<S>(rng.normal());
  bank.normalize();
  return bank;
}

/// B x M dot products between embeddings (rows) and prototypes (columns).
template <typename S>
Mat<S> scores(const Mat<S>& z, const PrototypeBank<S>& bank) {
  if (z.cols() != bank.P.rows()) throw ArgumentError("scores: embedding and prototype dimensions differ");
  return z * bank.P;
}

/// Entropic equipartition of a B x M score matrix. Starts from
/// exp(S/eps - rowmax), then for each of `iters` rounds rescales columns to
/// sum B/M and rows to sum 1. If `column_deviation` is given, the L1
/// distance of the column sums from B/M after every round is appended.
template <typename S>
Mat<S> sinkhorn(const Mat<S>& s, double eps, int iters, std::vector<double>* column_deviation = nullptr) {
  if (s.rows() < 1 || s.cols() < 1) throw ArgumentError("sinkhorn: empty score matrix");
  if (!(eps > 0.0) || iters < 1) throw ArgumentError("sinkhorn: need eps > 0 and iters >= 1");
  if (!s.allFinite()) throw ArgumentError("sinkhorn: non-finite scores");
  const S inv_eps = static_cast<S>(1.0 / eps);
  Mat<S> q = s * inv_eps;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const S mx = q.row(i).maxCoeff();
    q.row(i) = (q.row(i).array() - mx).exp();
  }
  const S col_target = static_cast<S>(double(s.rows()) / double(s.cols()));
  for (int it = 0; it < iters; ++it) {
    const Eigen::Matrix<S, 1, Eigen::Dynamic> cs = q.colwise().sum();
    q.array().rowwise() *= (col_target / cs.array());
    const Vec<S> rs = q.rowwise().sum();
    q.array().colwise() /= rs.array();
    if (column_deviation)
      column_deviation->push_back(static_cast<double>((q.colwise().sum().array() - col_target).abs().sum()));
  }
  return q;
}

/// Row-wise log-softmax of scores / tau.
template <typename S>
Mat<S> log_softmax_rows(const Mat<S>& s, double tau) {
  Mat<S> l = s / static_cast<S>(tau);
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const S mx = l.row(i).maxCoeff();
    const S lse = mx + std::log((l.row(i).array() - mx).exp().sum());
    l.row(i).array() -= lse;
  }
  return l;
}

/// -sum_m c_m log softmax_m(z . p_m / tau) for a single embedding.
template <typename S>
double assignment_xent(const Vec<S>& z, const Vec<S>& c, const PrototypeBank<S>& bank, double tau) {
  if (c.size() != bank.P.cols()) throw ArgumentError("assignment_xent: target size mismatch");
  const Mat<S> s = scores<S>(Mat<S>(z.transpose()), bank);
  const Mat<S> l = log_softmax_rows<S>(s, tau);
  return -static_cast<double>((l.row(0).transpose().array() * c.array()).sum());
}

template <typename S>
struct LossResult {
  double loss = 0.0;
  Mat<S> dz1;
  Mat<S> dz2;
  RowMat<S> dP;
  /// Targets actually used (constants): c1 from view 1, c2 from view 2.
  Mat<S> c1;
  Mat<S> c2;
};

/// mean_i [ l(z1_i, c2_i) + l(z2_i, c1_i) ] with c computed from the same
/// embeddings and treated as constants. Gradients w.r.t. z1, z2 and P.
template <typename S>
LossResult<S> swapped_prediction(const Mat<S>& z1, const Mat<S>& z2, const PrototypeBank<S>& bank,
                                 const ClusterConfig& cfg) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols())
    throw ArgumentError("swapped_prediction: views must have equal shapes");
  if (z1.rows() < 1) throw ArgumentError("swapped_prediction: empty batch");
  const Mat<S> s1 = scores(z1, bank);
  const Mat<S> s2 = scores(z2, bank);
  LossResult<S> r;
  if (cfg.sinkhorn_targets) {
    r.c1 = sinkhorn<S>(s1, cfg.sinkhorn_eps, cfg.sinkhorn_iters);
    r.c2 = sinkhorn<S>(s2, cfg.sinkhorn_eps, cfg.sinkhorn_iters);
  } else {
    r.c1 = s1;
    r.c2 = s2;
  }
  const Mat<S> l1 = log_softmax_rows<S>(s1, cfg.temperature);
  const Mat<S> l2 = log_softmax_rows<S>(s2, cfg.temperature);
  const double batch = double(z1.rows());
  r.loss = -static_cast<double>((l1.array() * r.c2.array()).sum() + (l2.array() * r.c1.array()).sum()) / batch;

  // d/ds of -sum_m c_m log softmax(s/tau)_m = (sum(c) softmax - c) / tau
  const S scale = static_cast<S>(1.0 / (cfg.temperature * batch));
  auto grad_scores = [scale](const Mat<S>& logp, const Mat<S>& c) {
    const Vec<S> mass = c.rowwise().sum();
    Mat<S> g = logp.array().exp().colwise() * mass.array();
    return Mat<S>((g - c) * scale);
  };
  const Mat<S> ds1 = grad_scores(l1, r.c2);
  const Mat<S> ds2 = grad_scores(l2, r.c1);
  r.dz1 = ds1 * bank.P.transpose();
  r.dz2 = ds2 * bank.P.transpose();
  r.dP = z1.transpose() * ds1 + z2.transpose() * ds2;
  return r;
}

template <typename S>
LossResult<S> swav_loss(const Mat<S>& z1, const Mat<S>& z2, const PrototypeBank<S>& bank, const ClusterConfig& cfg) {
  return swapped_prediction(z1, z2, bank, cfg);
}

/// Swaps the views' geometric transforms: z~1 = FTL(t2, z1), z~2 = FTL(t1, z2),
/// then the swapped-prediction loss on (z~1, z~2). Gradients are returned
/// w.r.t. the untransformed z1, z2.
template <typename S>
LossResult<S> swat_loss(const Mat<S>& z1, const Mat<S>& z2, const std::vector<AffineTransform2D>& t1,
                        const std::vector<AffineTransform2D>& t2, const PrototypeBank<S>& bank,
                        const ClusterConfig& cfg) {
  const Mat<S> zt1 = ftl_rows<S>(t2, z1);
  const Mat<S> zt2 = ftl_rows<S>(t1, z2);
  LossResult<S> r = swapped_prediction(zt1, zt2, bank, cfg);
  r.dz1 = ftl_rows_backward<S>(t2, z1, r.dz1);
  r.dz2 = ftl_rows_backward<S>(t1, z2, r.dz2);
  return r;
}

}  // namespace eqssl
