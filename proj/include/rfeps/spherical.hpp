#pragma once

#include "rfeps/common.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

namespace rfeps {

/// Unit normal parameterized by polar/azimuth angles:
/// embed(u, v) = (sin u cos v, sin u sin v, cos u).
template <typename Scalar>
struct SphericalNormal {
  Scalar u = Scalar(0);
  Scalar v = Scalar(0);
};

template <typename Scalar>
Vec3<Scalar> embed(Scalar u, Scalar v) {
  using std::cos;
  using std::sin;
  return {sin(u) * cos(v), sin(u) * sin(v), cos(u)};
}

template <typename Scalar>
Vec3<Scalar> embed_du(Scalar u, Scalar v) {
  using std::cos;
  using std::sin;
  return {cos(u) * cos(v), cos(u) * sin(v), -sin(u)};
}

template <typename Scalar>
Vec3<Scalar> embed_dv(Scalar u, Scalar v) {
  using std::cos;
  using std::sin;
  return {-sin(u) * sin(v), sin(u) * cos(v), Scalar(0)};
}

/// Rotated chart around a reference direction: the chart origin (u, v) =
/// (pi/2, 0) maps onto `reference`, keeping iterates away from the poles
/// where the azimuth gradient vanishes.
template <typename Scalar>
class NormalChart {
 public:
  NormalChart() : frame_(Mat3<Scalar>::Identity()) {}
  /// `hint` picks the tangent axis (projected onto the tangent plane); a
  /// data-derived hint keeps the chart equivariant under rotations.
  explicit NormalChart(const Vec3<Scalar>& reference, const Vec3<Scalar>& hint = Vec3<Scalar>::Zero()) {
    const Vec3<Scalar> x = reference.normalized();
    Vec3<Scalar> y = hint - x * x.dot(hint);
    if (!(y.norm() > Scalar(1e-6) * hint.norm()) || hint.norm() == Scalar(0)) {
      const Vec3<Scalar> helper = std::abs(x.x()) < Scalar(0.9) ? Vec3<Scalar>::UnitX() : Vec3<Scalar>::UnitY();
      y = helper - x * x.dot(helper);
    }
    y.normalize();
    frame_.col(0) = x;
    frame_.col(1) = y;
    frame_.col(2) = x.cross(y);
  }

  static constexpr Scalar origin_u() { return Scalar(1.5707963267948966192313216916398); }
  static constexpr Scalar origin_v() { return Scalar(0); }

  Vec3<Scalar> normal(Scalar u, Scalar v) const { return frame_ * embed(u, v); }
  Vec3<Scalar> d_du(Scalar u, Scalar v) const { return frame_ * embed_du(u, v); }
  Vec3<Scalar> d_dv(Scalar u, Scalar v) const { return frame_ * embed_dv(u, v); }

  /// Angles (in this chart) of a unit vector.
  SphericalNormal<Scalar> chart_of(const Vec3<Scalar>& n) const {
    using std::acos;
    using std::atan2;
    const Vec3<Scalar> local = frame_.transpose() * n.normalized();
    return {acos(std::clamp(local.z(), Scalar(-1), Scalar(1))), atan2(local.y(), local.x())};
  }

  const Mat3<Scalar>& frame() const { return frame_; }

 private:
  Mat3<Scalar> frame_;
};

/// Angle in [0, pi] between two unit vectors, stable near 0 and pi.
template <typename Scalar>
Scalar angle_between(const Vec3<Scalar>& a, const Vec3<Scalar>& b) {
  using std::atan2;
  return atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace rfeps
