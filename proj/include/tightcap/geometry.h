#pragma once

// Small fixed-size kernels shared by every module. Header-only and templated
// on the scalar so they compose with Eigen expressions.

#include <algorithm>
#include <cmath>

#include "tightcap/types.h"

namespace tightcap {

template <typename Derived>
Mat3T<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Mat3T<S> m;
  m << S(0), -v(2), v(1), v(2), S(0), -v(0), -v(1), v(0), S(0);
  return m;
}

// Rotation matrix of an axis-angle vector.
template <typename Derived>
Mat3T<typename Derived::Scalar> rotation_from_axis_angle(
    const Eigen::MatrixBase<Derived>& w) {
  using S = typename Derived::Scalar;
  const S theta = w.norm();
  if (theta < S(1e-12)) {
    return Mat3T<S>::Identity() + skew(w);
  }
  return Eigen::AngleAxis<S>(theta, w / theta).toRotationMatrix();
}

template <typename Derived>
Vec3T<typename Derived::Scalar> axis_angle_from_rotation(
    const Eigen::MatrixBase<Derived>& r) {
  using S = typename Derived::Scalar;
  Eigen::AngleAxis<S> aa{Mat3T<S>(r)};
  return aa.axis() * aa.angle();
}

// Angle between two vectors in degrees, robust near 0 and 180.
template <typename A, typename B>
double angle_deg(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  const double s = a.cross(b).norm();
  const double c = a.dot(b);
  return std::atan2(s, c) * 180.0 / M_PI;
}

template <typename S>
struct ClosestPoint {
  Vec3T<S> point;
  Vec3T<S> bary;  // barycentric weights of the triangle corners
  S squared_distance;
};

// Closest point on triangle (a, b, c) to p (Ericson, Real-Time Collision
// Detection, 5.1.5).
template <typename S>
ClosestPoint<S> closest_point_on_triangle(const Vec3T<S>& p, const Vec3T<S>& a,
                                          const Vec3T<S>& b,
                                          const Vec3T<S>& c) {
  auto make = [&](S u, S v, S w) {
    ClosestPoint<S> r;
    r.bary = Vec3T<S>(u, v, w);
    r.point = u * a + v * b + w * c;
    r.squared_distance = (r.point - p).squaredNorm();
    return r;
  };
  const Vec3T<S> ab = b - a, ac = c - a, ap = p - a;
  const S d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= S(0) && d2 <= S(0)) return make(1, 0, 0);
  const Vec3T<S> bp = p - b;
  const S d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= S(0) && d4 <= d3) return make(0, 1, 0);
  const S vc = d1 * d4 - d3 * d2;
  if (vc <= S(0) && d1 >= S(0) && d3 <= S(0)) {
    const S v = d1 / (d1 - d3);
    return make(1 - v, v, 0);
  }
  const Vec3T<S> cp = p - c;
  const S d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= S(0) && d5 <= d6) return make(0, 0, 1);
  const S vb = d5 * d2 - d1 * d6;
  if (vb <= S(0) && d2 >= S(0) && d6 <= S(0)) {
    const S w = d2 / (d2 - d6);
    return make(1 - w, 0, w);
  }
  const S va = d3 * d6 - d5 * d4;
  if (va <= S(0) && (d4 - d3) >= S(0) && (d5 - d6) >= S(0)) {
    const S w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return make(0, 1 - w, w);
  }
  const S denom = S(1) / (va + vb + vc);
  const S v = vb * denom, w = vc * denom;
  return make(1 - v - w, v, w);
}

template <typename S>
S smoothstep(S edge0, S edge1, S x) {
  const S t = std::clamp((x - edge0) / (edge1 - edge0), S(0), S(1));
  return t * t * (S(3) - S(2) * t);
}

}  // namespace tightcap
