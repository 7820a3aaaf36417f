#pragma once

// Mean, Gaussian and principal curvatures of the level set through a field
// sample, from its gradient g and Hessian H:
//
//   H_mean = (g H g^T - |g|^2 tr H) / (2 |g|^3)
//   G      = -det [[H, g^T], [g, 0]] / |g|^4 = g^T adj(H) g / |g|^4
//   k1,2   = H_mean +/- sqrt(max(H_mean^2 - G, 0))
//
// With the field positive on the normal side, a sphere with outward normals
// has k1 = k2 = -1/R.

#include "hrbf/field.hpp"

#include <algorithm>
#include <optional>

namespace hrbf {

struct CurvatureSample {
  double mean = 0.0;
  double gaussian = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  /// False when a principal value was clamped.
  bool reliable = true;
};

struct CurvatureOptions {
  double gradient_floor = 1e-8;
  /// |k| above this (1/m, i.e. radius below ~3 mm) is clamped and flagged.
  double clamp = 300.0;
};

inline Mat3 adjugate_symmetric(const Mat3& m) {
  Mat3 a;
  a(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  a(0, 1) = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
  a(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  a(1, 0) = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
  a(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
  a(1, 2) = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
  a(2, 0) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
  a(2, 1) = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
  a(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return a;
}

/// nullopt when |gradient| is below the floor (degenerate point).
inline std::optional<CurvatureSample> curvatures(const Vec3& gradient, const Mat3& hessian,
                                                 const CurvatureOptions& opt = {}) {
  const double gn2 = gradient.squaredNorm();
  const double gn = std::sqrt(gn2);
  if (!(gn >= opt.gradient_floor)) return std::nullopt;

  CurvatureSample c;
  c.mean = (gradient.dot(hessian * gradient) - gn2 * hessian.trace()) / (2.0 * gn2 * gn);
  c.gaussian = gradient.dot(adjugate_symmetric(hessian) * gradient) / (gn2 * gn2);
  const double disc = std::sqrt(std::max(c.mean * c.mean - c.gaussian, 0.0));
  c.k1 = c.mean + disc;
  c.k2 = c.mean - disc;

  if (std::abs(c.k1) > opt.clamp || std::abs(c.k2) > opt.clamp) {
    c.reliable = false;
    c.k1 = std::clamp(c.k1, -opt.clamp, opt.clamp);
    c.k2 = std::clamp(c.k2, -opt.clamp, opt.clamp);
    c.mean = 0.5 * (c.k1 + c.k2);
    c.gaussian = c.k1 * c.k2;
  }
  return c;
}

inline std::optional<CurvatureSample> curvatures(const FieldSample& s, const CurvatureOptions& opt = {}) {
  return curvatures(s.gradient, s.hessian, opt);
}

}  // namespace hrbf
