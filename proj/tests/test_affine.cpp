#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eqssl/affine.hpp"
#include "eqssl/augment.hpp"
#include "eqssl/image.hpp"
#include "eqssl/rng.hpp"

using namespace eqssl;
using std::numbers::pi;

namespace {

constexpr double kDeg = pi / 180.0;

void expect_matrix(const Mat2& m, double a, double b, double c, double d, double tol = 1e-12) {
  EXPECT_NEAR(m[0][0], a, tol);
  EXPECT_NEAR(m[0][1], b, tol);
  EXPECT_NEAR(m[1][0], c, tol);
  EXPECT_NEAR(m[1][1], d, tol);
}

double max_abs_diff(const Mat2& a, const Mat2& b) {
  double r = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r = std::max(r, std::abs(a[i][j] - b[i][j]));
  return r;
}

Image gradient_image(int h = 16, int w = 16) {
  Image img(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(0, y, x) = float(0.1 + 0.8 * (x + 2.0 * y) / (w + 2.0 * h));
  return img;
}

}  // namespace

TEST(Rotation, ZeroIsIdentity) { expect_matrix(rotation_matrix(0.0).m, 1, 0, 0, 1); }

TEST(Rotation, QuarterTurn) { expect_matrix(rotation_matrix(pi / 2).m, 0, -1, 1, 0); }

TEST(Rotation, GroupClosure) {
  const auto r = compose(rotation_matrix(pi / 6), rotation_matrix(pi / 3));
  EXPECT_LE(max_abs_diff(r.m, rotation_matrix(pi / 2).m), 1e-12);
}

TEST(Rotation, NonFiniteAngleThrows) {
  EXPECT_THROW(rotation_matrix(std::nan("")), ArgumentError);
  EXPECT_THROW(rotation_matrix(INFINITY), ArgumentError);
}

TEST(Rotation, OrthogonalWithUnitDeterminant) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto t = rotation_matrix(rng.uniform(-10, 10));
    EXPECT_NEAR(t.det(), 1.0, 1e-12);
    EXPECT_TRUE(t.is_orthogonal(1e-12));
    EXPECT_EQ(t.kind, AffineTransform2D::Kind::rotation);
  }
}

TEST(Hflip, Definition) {
  const auto f = hflip_matrix();
  expect_matrix(f.m, -1, 0, 0, 1, 0.0);
  EXPECT_DOUBLE_EQ(f.det(), -1.0);
  EXPECT_EQ(f.kind, AffineTransform2D::Kind::hflip);
}

TEST(Hflip, Involution) {
  const auto ff = compose(hflip_matrix(), hflip_matrix());
  EXPECT_TRUE(ff.is_identity());
  EXPECT_EQ(ff.kind, AffineTransform2D::Kind::identity);
}

TEST(Compose, IdentityElement) {
  const auto b = rotation_matrix(0.7);
  EXPECT_EQ(max_abs_diff(compose(identity_transform(), b).m, b.m), 0.0);
}

TEST(Compose, Inverse) {
  const auto r = compose(rotation_matrix(0.4), rotation_matrix(-0.4));
  expect_matrix(r.m, 1, 0, 0, 1);
}

TEST(Compose, RotationAfterFlipByHand) {
  const auto t = compose(rotation_matrix(pi / 2), hflip_matrix());
  expect_matrix(t.m, 0, -1, -1, 0);
  EXPECT_EQ(t.kind, AffineTransform2D::Kind::composite);
}

TEST(Compose, GroupLaws) {
  Rng rng(11);
  auto random_t = [&rng] {
    auto t = rotation_matrix(rng.uniform(-pi, pi));
    return rng.bernoulli(0.5) ? compose(t, hflip_matrix()) : t;
  };
  for (int i = 0; i < 500; ++i) {
    const auto a = random_t(), b = random_t(), c = random_t();
    EXPECT_LE(max_abs_diff(compose(compose(a, b), c).m, compose(a, compose(b, c)).m), 1e-12);
    const auto ab = compose(a, b);
    EXPECT_NEAR(std::abs(ab.det()), 1.0, 1e-12);
    EXPECT_TRUE(ab.is_orthogonal(1e-12));
    const auto r1 = rotation_matrix(rng.uniform(-pi, pi)), r2 = rotation_matrix(rng.uniform(-pi, pi));
    EXPECT_LE(max_abs_diff(compose(r1, r2).m, compose(r2, r1).m), 1e-12);
  }
}

TEST(Catalog, AllProbabilitiesZeroGivesNoOp) {
  Rng rng(5);
  const CatalogConfig none = CatalogConfig::none();
  const Image img = gradient_image();
  for (int i = 0; i < 20; ++i) {
    TransformSpec s = sample_transform(none, rng);
    s.rng_seed = 0;
    EXPECT_EQ(s, TransformSpec{});
    EXPECT_TRUE(geometric_part(s).is_identity());
    EXPECT_EQ(apply_to_image(s, img), img);
  }
}

TEST(Catalog, FixedSeedIsDeterministic) {
  const CatalogConfig cfg;
  Rng a(42), b(42);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_transform(cfg, a), sample_transform(cfg, b));
}

TEST(Catalog, FlipRateConcentrates) {
  CatalogConfig cfg;
  cfg.hflip_p = 0.5;
  Rng rng(2024);
  int flips = 0;
  for (int i = 0; i < 10000; ++i) flips += sample_transform(cfg, rng).hflip;
  EXPECT_GE(flips, 4700);
  EXPECT_LE(flips, 5300);
}

TEST(Catalog, FieldsStayInRange) {
  CatalogConfig cfg;
  cfg.crop_p = 1.0;
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const auto s = sample_transform(cfg, rng);
    EXPECT_GE(s.crop_scale, 0.6);
    EXPECT_LE(s.crop_scale, 1.0);
    EXPECT_LE(std::abs(s.rotation_rad), cfg.rotation_max_rad);
    EXPECT_LE(std::abs(s.brightness_delta), 0.2);
    EXPECT_GE(s.contrast_factor, 0.7);
    EXPECT_LE(s.contrast_factor, 1.3);
    EXPECT_GE(s.noise_sigma, 0.0);
    EXPECT_LE(s.noise_sigma, 0.05);
  }
}

TEST(Catalog, InvalidRangesThrow) {
  CatalogConfig cfg;
  cfg.crop_min = 0.9;
  cfg.crop_max = 0.7;
  Rng rng(1);
  EXPECT_THROW(sample_transform(cfg, rng), ConfigError);
  CatalogConfig p;
  p.hflip_p = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(ApplyToImage, IdentitySpecIsPixelIdentical) {
  const Image img = gradient_image(32, 32);
  EXPECT_EQ(apply_to_image(TransformSpec{}, img), img);
}

TEST(ApplyToImage, TwoHalfTurnsRestoreImage) {
  const Image img = gradient_image(32, 32);
  const auto half = geometric_spec(false, pi);
  const Image back = apply_to_image(half, apply_to_image(half, img));
  EXPECT_LE(mean_abs_diff(back, img), 0.02);
}

TEST(ApplyToImage, HflipMovesBrightPixel) {
  Image img(8, 10, 1, 0.0f);
  img.at(0, 3, 2) = 1.0f;
  const Image out = apply_to_image(geometric_spec(true, 0.0), img);
  EXPECT_EQ(out.at(0, 3, 10 - 1 - 2), 1.0f);
  EXPECT_EQ(out.at(0, 3, 2), 0.0f);
}

TEST(ApplyToImage, RotationIsCounterclockwiseOnScreen) {
  // a bright pixel right of center goes above center after +90 degrees
  Image img(33, 33, 1, 0.0f);
  img.at(0, 16, 26) = 1.0f;
  const Image out = rotate_image(img, pi / 2);
  EXPECT_NEAR(out.at(0, 6, 16), 1.0f, 1e-5);
  EXPECT_NEAR(out.at(0, 16, 26), 0.0f, 1e-5);
}

TEST(ApplyToImage, OutputIsClampedAndSameSize) {
  CatalogConfig cfg;
  cfg.brightness_p = cfg.contrast_p = cfg.noise_p = cfg.crop_p = 1.0;
  Rng rng(99);
  const Image img = gradient_image(32, 32);
  for (int i = 0; i < 50; ++i) {
    const Image out = apply_to_image(sample_transform(cfg, rng), img);
    ASSERT_EQ(out.height, img.height);
    ASSERT_EQ(out.width, img.width);
    for (float v : out.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(ApplyToImage, Deterministic) {
  CatalogConfig cfg;
  cfg.noise_p = 1.0;
  Rng rng(17);
  const Image img = gradient_image(32, 32);
  for (int i = 0; i < 10; ++i) {
    const auto s = sample_transform(cfg, rng);
    EXPECT_EQ(apply_to_image(s, img), apply_to_image(s, img));
  }
}

TEST(GeometricPart, Examples) {
  EXPECT_TRUE(geometric_part(geometric_spec(false, 0.0)).is_identity());
  expect_matrix(geometric_part(geometric_spec(true, 0.0)).m, -1, 0, 0, 1, 0.0);
  expect_matrix(geometric_part(geometric_spec(true, pi / 2)).m, 0, -1, -1, 0);
}

TEST(GeometricPart, IgnoresAppearanceAndCrop) {
  CatalogConfig cfg;
  cfg.crop_p = 1.0;
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    TransformSpec a = sample_transform(cfg, rng);
    TransformSpec b = sample_transform(cfg, rng);
    b.hflip = a.hflip;
    b.rotation_rad = a.rotation_rad;
    EXPECT_LE(max_abs_diff(geometric_part(a).m, geometric_part(b).m), 1e-15);
  }
}

TEST(GazeLabelTransform, HflipNegatesYaw) {
  const auto g = transform_gaze_label(hflip_matrix(), {10 * kDeg, 5 * kDeg});
  EXPECT_NEAR(g.yaw, -10 * kDeg, 1e-12);
  EXPECT_NEAR(g.pitch, 5 * kDeg, 1e-12);
}

TEST(GazeLabelTransform, QuarterTurnMovesYawIntoPitch) {
  const auto g = transform_gaze_label(rotation_matrix(pi / 2), {10 * kDeg, 0.0});
  EXPECT_NEAR(g.yaw, 0.0, 1e-12);
  EXPECT_NEAR(g.pitch, 10 * kDeg, 1e-12);
}

TEST(GazeLabelTransform, MatchesIndependent3dRotation) {
  // rotate about the camera z axis, written out directly
  const double yaw = 20 * kDeg, pitch = 10 * kDeg, th = 30 * kDeg;
  const double x = std::cos(pitch) * std::sin(yaw), y = std::sin(pitch), z = std::cos(pitch) * std::cos(yaw);
  const double xr = std::cos(th) * x - std::sin(th) * y;
  const double yr = std::sin(th) * x + std::cos(th) * y;
  const double want_yaw = std::atan2(xr, z);
  const double want_pitch = std::asin(yr);
  const auto g = transform_gaze_label(rotation_matrix(th), {yaw, pitch});
  EXPECT_NEAR(g.yaw, want_yaw, 1e-12);
  EXPECT_NEAR(g.pitch, want_pitch, 1e-12);
  // frozen value
  EXPECT_NEAR(g.yaw / kDeg, 12.4831, 1e-3);
  EXPECT_NEAR(g.pitch / kDeg, 18.5901, 1e-3);
}

TEST(GazeLabelTransform, RejectsNonOrthogonal) {
  AffineTransform2D t;
  t.m = {{{2.0, 0.0}, {0.0, 1.0}}};
  t.kind = AffineTransform2D::Kind::composite;
  EXPECT_THROW(transform_gaze_label(t, {0.1, 0.1}), ArgumentError);
}

TEST(GazeLabelTransform, PreservesUnitNorm) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const GazeLabel g{rng.uniform(-pi / 2, pi / 2), rng.uniform(-1.2, 1.2)};
    const auto t = compose(rotation_matrix(rng.uniform(-pi, pi)), rng.bernoulli(0.5) ? hflip_matrix() : identity_transform());
    const Vec3 v = gaze_to_vector(g);
    const double x = t.m[0][0] * v.x + t.m[0][1] * v.y;
    const double y = t.m[1][0] * v.x + t.m[1][1] * v.y;
    EXPECT_NEAR(x * x + y * y + v.z * v.z, 1.0, 1e-12);
    const Vec3 w = gaze_to_vector(transform_gaze_label(t, g));
    EXPECT_NEAR(w.x, x, 1e-9);
    EXPECT_NEAR(w.y, y, 1e-9);
  }
}
