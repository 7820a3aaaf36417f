#pragma once

#include "hrbf/common.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>

namespace hrbf {

/// Pinhole intrinsics. Pixel (x, y) addresses the center of column x, row y.
struct Intrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;
  /// Raw depth units per meter (TUM: 5000).
  double depth_scale = 5000.0;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("Intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw std::invalid_argument("Intrinsics: image size must be positive");
    if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height))
      throw std::invalid_argument("Intrinsics: principal point outside the image");
    if (!(depth_scale > 0.0)) throw std::invalid_argument("Intrinsics: depth scale must be positive");
  }

  /// K^-1 (x, y, 1): the ray through a pixel with unit z.
  Vec3 unproject(double x, double y) const { return {(x - cx) / fx, (y - cy) / fy, 1.0}; }

  Vec2 project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }

  bool contains(double x, double y) const { return x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1; }

  /// Same camera with the image downsampled by an integer factor.
  Intrinsics scaled(int factor) const {
    Intrinsics k = *this;
    k.fx = fx / factor;
    k.fy = fy / factor;
    k.cx = (cx + 0.5) / factor - 0.5;
    k.cy = (cy + 0.5) / factor - 0.5;
    k.width = width / factor;
    k.height = height / factor;
    return k;
  }

  /// Kinect-class camera (fx = fy = 525 at 640x480) at 640/factor resolution.
  static Intrinsics kinect(int factor = 1) { return Intrinsics{}.scaled(factor); }
};

/// Rigid transform mapping camera coordinates to world coordinates.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Pose operator*(const Pose& o) const { return {rotation * o.rotation, rotation * o.translation + translation}; }

  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Pose from_matrix(const Mat4& m) { return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()}; }

  /// Re-orthonormalizes the rotation (polar decomposition via quaternion).
  Pose normalized() const {
    Eigen::Quaterniond q(rotation);
    q.normalize();
    return {q.toRotationMatrix(), translation};
  }

  bool is_rigid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

/// Rodrigues rotation for an axis-angle vector; series expansion for tiny angles.
inline Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(phi);
  double a, b;
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

inline Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

/// Twist layout (rho, phi): translation part first, rotation part last.
inline Pose se3_exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(phi);
  double b, c;
  if (theta < 1e-8) {
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Mat3 v = Mat3::Identity() + b * k + c * k * k;
  return {so3_exp(phi), v * rho};
}

/// Rotation angle of R_a^T R_b, radians.
inline double rotation_distance(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const Vec3 axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (rel.trace() - 1.0));
}

/// Camera looking from `eye` towards `target`; image y axis roughly along `down`.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& down = Vec3::UnitY()) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Pose p;
  p.rotation.col(0) = x;
  p.rotation.col(1) = y;
  p.rotation.col(2) = z;
  p.translation = eye;
  return p;
}

}  // namespace hrbf
