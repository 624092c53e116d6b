#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eqssl/affine.hpp"
#include "eqssl/ftl.hpp"
#include "eqssl/rng.hpp"

using namespace eqssl;
using std::numbers::pi;

namespace {

Vec<double> vec4(double a, double b, double c, double d) {
  Vec<double> v(4);
  v << a, b, c, d;
  return v;
}

Vec<double> random_unit(int d, Rng& rng) {
  Vec<double> v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v / v.norm();
}

AffineTransform2D random_orthogonal(Rng& rng) {
  const auto r = rotation_matrix(rng.uniform(-pi, pi));
  return rng.bernoulli(0.5) ? compose(r, hflip_matrix()) : r;
}

const double kS = 1.0 / std::sqrt(2.0);

}  // namespace

TEST(Ftl, IdentityKeepsUnitVector) {
  Rng rng(1);
  const Vec<double> z = random_unit(32, rng);
  EXPECT_LE((ftl<double>(identity_transform(), z) - z).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ftl, FlipByHand) {
  const Vec<double> out = ftl<double>(hflip_matrix(), vec4(kS, 0, 0, kS));
  EXPECT_LE((out - vec4(-kS, 0, 0, kS)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ftl, QuarterTurnByHand) {
  const Vec<double> out = ftl<double>(rotation_matrix(pi / 2), vec4(kS, 0, 0, kS));
  EXPECT_LE((out - vec4(0, kS, -kS, 0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ftl, OddDimensionThrows) {
  Vec<double> z = Vec<double>::Ones(5);
  EXPECT_THROW(ftl<double>(identity_transform(), z), ArgumentError);
  EXPECT_THROW(ftl_linear<double>(hflip_matrix(), z), ArgumentError);
}

TEST(Ftl, SingularTransformThrows) {
  AffineTransform2D zero;
  zero.m = {{{0.0, 0.0}, {0.0, 0.0}}};
  zero.kind = AffineTransform2D::Kind::composite;
  EXPECT_THROW(ftl<double>(zero, vec4(kS, 0, 0, kS)), ArgumentError);
}

TEST(Ftl, OrthogonalPreservesNorm) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    Vec<double> z(32);
    for (int k = 0; k < 32; ++k) z[k] = 3.0 * rng.normal();
    EXPECT_NEAR(ftl_linear<double>(random_orthogonal(rng), z).norm(), z.norm(), 1e-9);
  }
}

TEST(Ftl, Composition) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_orthogonal(rng), b = random_orthogonal(rng);
    const Vec<double> z = random_unit(32, rng);
    const Vec<double> lhs = ftl<double>(a, ftl<double>(b, z));
    const Vec<double> rhs = ftl<double>(compose(a, b), z);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Ftl, FlipIsInvolution) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec<double> z = random_unit(32, rng);
    EXPECT_LE((ftl<double>(hflip_matrix(), ftl<double>(hflip_matrix(), z)) - z).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Ftl, UnnormalizedMapIsLinear) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto t = random_orthogonal(rng);
    const Vec<double> x = random_unit(16, rng), y = random_unit(16, rng);
    const double a = rng.normal(), b = rng.normal();
    const Vec<double> lhs = ftl_linear<double>(t, Vec<double>(a * x + b * y));
    const Vec<double> rhs = a * ftl_linear<double>(t, x) + b * ftl_linear<double>(t, y);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ftl, RowsApplyPerRowTransform) {
  Rng rng(6);
  Mat<double> z(3, 8);
  for (int r = 0; r < 3; ++r) z.row(r) = random_unit(8, rng).transpose();
  const std::vector<AffineTransform2D> ts{identity_transform(), hflip_matrix(), rotation_matrix(0.3)};
  const Mat<double> out = ftl_rows<double>(ts, z);
  EXPECT_EQ(out.row(0), z.row(0));
  for (int r = 1; r < 3; ++r)
    EXPECT_LE((out.row(r).transpose() - ftl<double>(ts[std::size_t(r)], z.row(r).transpose())).cwiseAbs().maxCoeff(),
              0.0);
  EXPECT_THROW(ftl_rows<double>({identity_transform()}, z), ArgumentError);
}

TEST(Ftl, RowsBackwardMatchesFiniteDifferences) {
  Rng rng(7);
  Mat<double> z(4, 8), probe(4, 8);
  for (int r = 0; r < 4; ++r) z.row(r) = random_unit(8, rng).transpose();
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe.data()[i] = rng.normal();
  std::vector<AffineTransform2D> ts;
  for (int r = 0; r < 4; ++r) ts.push_back(random_orthogonal(rng));
  const Mat<double> analytic = ftl_rows_backward<double>(ts, z, probe);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Mat<double> up = z, down = z;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double num = (ftl_rows<double>(ts, up).cwiseProduct(probe).sum() -
                        ftl_rows<double>(ts, down).cwiseProduct(probe).sum()) /
                       (2 * h);
    EXPECT_NEAR(num, analytic.data()[i], 1e-7);
  }
}
