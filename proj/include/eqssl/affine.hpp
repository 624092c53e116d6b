#pragma once

// 2x2 linear transforms (rotations, horizontal flips and their compositions)
// and their action on gaze labels.
//
// Frame convention: x points right, y points up, z points away from the
// camera into the scene. Rotations are counterclockwise in that frame.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "eqssl/errors.hpp"

namespace eqssl {

/// Gaze direction as (yaw, pitch) in radians.
struct GazeLabel {
  double yaw = 0.0;
  double pitch = 0.0;

  bool operator==(const GazeLabel&) const = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Unit gaze vector v = (cos p sin y, sin p, cos p cos y).
inline Vec3 gaze_to_vector(const GazeLabel& g) noexcept {
  return {std::cos(g.pitch) * std::sin(g.yaw), std::sin(g.pitch),
          std::cos(g.pitch) * std::cos(g.yaw)};
}

inline GazeLabel vector_to_gaze(const Vec3& v) noexcept {
  const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  const double sy = std::clamp(v.y / n, -1.0, 1.0);
  return {std::atan2(v.x, v.z), std::asin(sy)};
}

using Mat2 = std::array<std::array<double, 2>, 2>;

struct AffineTransform2D {
  enum class Kind { identity, rotation, hflip, composite };

  Mat2 m{{{1.0, 0.0}, {0.0, 1.0}}};
  Kind kind = Kind::identity;
  /// Meaningful only when kind == rotation.
  double angle_rad = 0.0;

  double det() const noexcept { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }

  /// Exact identity (signed zeros compare equal).
  bool is_identity() const noexcept {
    return m[0][0] == 1.0 && m[0][1] == 0.0 && m[1][0] == 0.0 && m[1][1] == 1.0;
  }

  /// max |m^T m - I| <= tol.
  bool is_orthogonal(double tol = 1e-9) const noexcept {
    const double a = m[0][0] * m[0][0] + m[1][0] * m[1][0] - 1.0;
    const double b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    const double c = m[0][1] * m[0][1] + m[1][1] * m[1][1] - 1.0;
    return std::abs(a) <= tol && std::abs(b) <= tol && std::abs(c) <= tol;
  }

  std::string describe() const;
};

inline AffineTransform2D identity_transform() noexcept { return {}; }

inline AffineTransform2D rotation_matrix(double theta_rad) {
  if (!std::isfinite(theta_rad)) throw ArgumentError("rotation_matrix: non-finite angle");
  const double c = std::cos(theta_rad);
  const double s = std::sin(theta_rad);
  AffineTransform2D t;
  t.m = {{{c, -s}, {s, c}}};
  t.kind = AffineTransform2D::Kind::rotation;
  t.angle_rad = theta_rad;
  return t;
}

inline AffineTransform2D hflip_matrix() noexcept {
  AffineTransform2D t;
  t.m = {{{-1.0, 0.0}, {0.0, 1.0}}};
  t.kind = AffineTransform2D::Kind::hflip;
  return t;
}

/// Matrix product a.m * b.m: apply b first, then a.
inline AffineTransform2D compose(const AffineTransform2D& a, const AffineTransform2D& b) noexcept {
  AffineTransform2D r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r.m[i][j] = a.m[i][0] * b.m[0][j] + a.m[i][1] * b.m[1][j];
  r.kind = r.is_identity() ? AffineTransform2D::Kind::identity : AffineTransform2D::Kind::composite;
  return r;
}

inline std::string AffineTransform2D::describe() const {
  switch (kind) {
    case Kind::identity:
      return "identity";
    case Kind::hflip:
      return "hflip";
    case Kind::rotation: {
      const double deg = angle_rad * 180.0 / std::numbers::pi;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "rot%+.0f", deg);
      return buf;
    }
    case Kind::composite:
      break;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "[[%.4f,%.4f],[%.4f,%.4f]]", m[0][0], m[0][1], m[1][0], m[1][1]);
  return buf;
}

/// Applies the linear part of `t` to the gaze direction's (x, y) components.
/// Only orthogonal transforms keep the 3D vector on the unit sphere.
inline GazeLabel transform_gaze_label(const AffineTransform2D& t, const GazeLabel& g) {
  if (!t.is_orthogonal(1e-9))
    throw ArgumentError("transform_gaze_label: transform is not orthogonal");
  const Vec3 v = gaze_to_vector(g);
  const Vec3 w{t.m[0][0] * v.x + t.m[0][1] * v.y, t.m[1][0] * v.x + t.m[1][1] * v.y, v.z};
  return {std::atan2(w.x, w.z), std::asin(std::clamp(w.y, -1.0, 1.0))};
}

}  // namespace eqssl
