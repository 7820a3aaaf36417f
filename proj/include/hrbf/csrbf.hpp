#pragma once

// Wendland C2 compactly supported radial kernel
//
//   psi(d) = (1 - d/r)^4 (4 d/r + 1)   for d in [0, r], 0 otherwise,
//
// and its derivatives with respect to the query point x, where d = |x - p|.
// With u = d/r the radial profile factors nicely:
//
//   grad psi   = A(d) o,                     A = -20 (1-u)^3 / r^2
//   Hess psi   = A I + B o o^T,              B = 60 (1-u)^2 / (r^3 d)
//   (D3 psi).n = b [(e.n) I + n e^T + e n^T] + c (e.n) e e^T
//                 b = 60 (1-u)^2 / r^3,      c = -60 (1-u^2) / r^3
//
// with o = x - p and e = o / d. The third derivative has no limit at d = 0
// (psi contains a |x|^3 term); its direction average, zero, is used there.

#include "hrbf/common.hpp"

namespace hrbf {

inline double csrbf_value(double d, double r) {
  if (d < 0.0 || d >= r) return 0.0;
  const double u = d / r;
  const double s = 1.0 - u;
  const double s2 = s * s;
  return s2 * s2 * (4.0 * u + 1.0);
}

/// d psi / d d, the radial derivative.
inline double csrbf_radial_derivative(double d, double r) {
  if (d < 0.0 || d >= r) return 0.0;
  const double u = d / r;
  const double s = 1.0 - u;
  return -20.0 * u * s * s * s / r;
}

inline Vec3 csrbf_gradient(const Vec3& offset, double r) {
  const double d = offset.norm();
  if (d >= r) return Vec3::Zero();
  const double s = 1.0 - d / r;
  return (-20.0 * s * s * s / (r * r)) * offset;
}

inline Mat3 csrbf_hessian(const Vec3& offset, double r) {
  const double d = offset.norm();
  if (d >= r) return Mat3::Zero();
  const double s = 1.0 - d / r;
  const double a = -20.0 * s * s * s / (r * r);
  Mat3 h = a * Mat3::Identity();
  if (d > 0.0) h.noalias() += (60.0 * s * s / (r * r * r * d)) * offset * offset.transpose();
  return h;
}

/// Third derivative of psi contracted once with `n`: sum_k D3psi_ijk n_k.
inline Mat3 csrbf_third_contracted(const Vec3& offset, const Vec3& n, double r) {
  const double d = offset.norm();
  if (d >= r || d == 0.0) return Mat3::Zero();
  const double u = d / r;
  const double r3 = r * r * r;
  const double b = 60.0 * (1.0 - u) * (1.0 - u) / r3;
  const double c = -60.0 * (1.0 - u * u) / r3;
  const Vec3 e = offset / d;
  const double en = e.dot(n);
  Mat3 t = (b * en) * Mat3::Identity();
  t.noalias() += b * (n * e.transpose() + e * n.transpose());
  t.noalias() += (c * en) * e * e.transpose();
  return t;
}

}  // namespace hrbf
