#pragma once

// Feature transform layer: applies a 2x2 image-space transform to an even
// sized feature vector viewed as 2 x (d/2) columns (z[2j], z[2j+1]), then
// L2-normalizes. Non-trainable.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "eqssl/affine.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"

namespace eqssl {

/// Unnormalized map: every coordinate pair is multiplied by t.m. Linear in z.
template <typename S>
Vec<S> ftl_linear(const AffineTransform2D& t, const Eigen::Ref<const Vec<S>>& z) {
  if (z.size() % 2 != 0) throw ArgumentError("ftl: feature dimension must be even");
  Vec<S> out(z.size());
  const S a = S(t.m[0][0]), b = S(t.m[0][1]), c = S(t.m[1][0]), d = S(t.m[1][1]);
  for (Eigen::Index j = 0; j < z.size(); j += 2) {
    out[j] = a * z[j] + b * z[j + 1];
    out[j + 1] = c * z[j] + d * z[j + 1];
  }
  return out;
}

template <typename S>
Vec<S> ftl(const AffineTransform2D& t, const Eigen::Ref<const Vec<S>>& z) {
  Vec<S> u = ftl_linear<S>(t, z);
  const S n = u.norm();
  if (!(static_cast<double>(n) >= 1e-12)) throw ArgumentError("ftl: transformed feature has zero norm");
  return u / n;
}

/// Row-wise FTL over a B x d batch with one transform per row. Rows whose
/// transform is exactly the identity pass through untouched: batch inputs
/// are projection outputs, already unit-norm.
template <typename S>
Mat<S> ftl_rows(const std::vector<AffineTransform2D>& ts, const Mat<S>& z) {
  if (ts.size() != std::size_t(z.rows())) throw ArgumentError("ftl_rows: one transform per row required");
  Mat<S> out = z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (ts[std::size_t(i)].is_identity()) continue;
    out.row(i) = ftl<S>(ts[std::size_t(i)], z.row(i).transpose()).transpose();
  }
  return out;
}

/// Vector-Jacobian product of ftl_rows: maps dL/d(output) to dL/dz.
template <typename S>
Mat<S> ftl_rows_backward(const std::vector<AffineTransform2D>& ts, const Mat<S>& z, const Mat<S>& dout) {
  Mat<S> dz = dout;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto& t = ts[std::size_t(i)];
    if (t.is_identity()) continue;
    const Vec<S> u = ftl_linear<S>(t, z.row(i).transpose());
    const S n = u.norm();
    const Vec<S> y = u / n;
    const Vec<S> g = dout.row(i).transpose();
    const Vec<S> du = (g - y * y.dot(g)) / n;
    AffineTransform2D tt = t;
    tt.m = {{{t.m[0][0], t.m[1][0]}, {t.m[0][1], t.m[1][1]}}};
    dz.row(i) = ftl_linear<S>(tt, du).transpose();
  }
  return dz;
}

}  // namespace eqssl
