#pragma once

// Analytic scenes (planes, spheres, oriented boxes) rendered by exact
// ray-primitive intersection, with seeded Gaussian depth noise.

#include "hrbf/camera.hpp"
#include "hrbf/pixel_map.hpp"

#include <limits>
#include <optional>
#include <random>
#include <variant>
#include <vector>

namespace hrbf {

struct PlanePrimitive {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct SpherePrimitive {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Box with half extents along the columns of `rotation`.
struct BoxPrimitive {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 half_extents = Vec3::Constant(0.5);
};

using Primitive = std::variant<PlanePrimitive, SpherePrimitive, BoxPrimitive>;

struct SceneObject {
  Primitive shape;
  Color albedo = Color::Constant(0.8);
};

struct RayHit {
  double t = 0.0;
  Vec3 normal = Vec3::Zero();
};

inline std::optional<RayHit> intersect(const PlanePrimitive& p, const Vec3& o, const Vec3& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = p.normal.dot(p.point - o) / denom;
  if (t <= 0.0) return std::nullopt;
  return RayHit{t, p.normal};
}

inline std::optional<RayHit> intersect(const SpherePrimitive& s, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - s.center;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / a;
  if (t <= 0.0) t = (-b + sq) / a;
  if (t <= 0.0) return std::nullopt;
  return RayHit{t, (o + t * d - s.center) / s.radius};
}

inline std::optional<RayHit> intersect(const BoxPrimitive& b, const Vec3& o, const Vec3& d) {
  const Vec3 lo = b.rotation.transpose() * (o - b.center);
  const Vec3 ld = b.rotation.transpose() * d;
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1, axis1 = -1;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(ld[i]) < 1e-15) {
      if (std::abs(lo[i]) > b.half_extents[i]) return std::nullopt;
      continue;
    }
    double ta = (-b.half_extents[i] - lo[i]) / ld[i];
    double tb = (b.half_extents[i] - lo[i]) / ld[i];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = i;
    }
    if (tb < t1) {
      t1 = tb;
      axis1 = i;
    }
  }
  if (t0 > t1) return std::nullopt;
  double t = t0;
  int axis = axis0;
  if (t <= 0.0) {
    t = t1;
    axis = axis1;
  }
  if (t <= 0.0 || axis < 0) return std::nullopt;
  Vec3 ln = Vec3::Zero();
  ln[axis] = (lo[axis] + t * ld[axis]) > 0.0 ? 1.0 : -1.0;
  return RayHit{t, b.rotation * ln};
}

/// Unsigned distance from p to the primitive's surface.
inline double surface_distance(const PlanePrimitive& p, const Vec3& x) { return std::abs(p.normal.dot(x - p.point)); }

inline double surface_distance(const SpherePrimitive& s, const Vec3& x) {
  return std::abs((x - s.center).norm() - s.radius);
}

inline double surface_distance(const BoxPrimitive& b, const Vec3& x) {
  const Vec3 q = (b.rotation.transpose() * (x - b.center)).cwiseAbs() - b.half_extents;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return std::abs(outside + inside);
}

struct Scene {
  std::vector<SceneObject> objects;
  /// Period of the procedural texture, meters.
  double texture_period = 0.25;
  double texture_amplitude = 0.2;

  /// Smooth 3D texture modulating each object's albedo.
  Color shade(const SceneObject& obj, const Vec3& p) const {
    const double w = 2.0 * kPi / texture_period;
    const double m = 0.75 + texture_amplitude * std::sin(w * p.x()) * std::sin(w * p.y() + 0.7) * std::sin(w * p.z() + 1.3);
    return (obj.albedo * m).cwiseMin(1.0).cwiseMax(0.0);
  }

  /// Nearest hit along o + t d (d need not be unit); index of the object hit.
  std::optional<std::pair<RayHit, std::size_t>> trace(const Vec3& o, const Vec3& d) const {
    std::optional<std::pair<RayHit, std::size_t>> best;
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const auto hit = std::visit([&](const auto& s) { return intersect(s, o, d); }, objects[i].shape);
      if (hit && (!best || hit->t < best->first.t)) best = std::make_pair(*hit, i);
    }
    return best;
  }

  double distance(const Vec3& x) const {
    double best = std::numeric_limits<double>::infinity();
    for (const SceneObject& obj : objects)
      best = std::min(best, std::visit([&](const auto& s) { return surface_distance(s, x); }, obj.shape));
    return best;
  }
};

struct RenderedFrame {
  PixelMap<double> depth;  ///< z-depth, meters
  PixelMap<Color> color;
};

/// Renders z-depth and color from `camera_to_world`. Noise is Gaussian with
/// standard deviation `noise_sigma` raw depth units (K.depth_scale per meter).
inline RenderedFrame render_synthetic(const Scene& scene, const Pose& camera_to_world, const Intrinsics& k,
                                      double noise_sigma = 0.0, std::uint64_t seed = 0) {
  RenderedFrame out{PixelMap<double>(k.width, k.height), PixelMap<Color>(k.width, k.height)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma / k.depth_scale : 1.0);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 dc = k.unproject(x, y);
      const Vec3 dw = camera_to_world.rotation * dc;
      const auto hit = scene.trace(camera_to_world.translation, dw);
      if (!hit) continue;
      double z = hit->first.t;  // dc.z() == 1, so t is the z-depth
      const Vec3 pw = camera_to_world.translation + z * dw;
      if (noise_sigma > 0.0) z += noise(rng);
      if (!(z > 0.0)) continue;
      out.depth.set(x, y, z);
      out.color.set(x, y, scene.shade(scene.objects[hit->second], pw));
    }
  }
  return out;
}

/// Closed room (inward normals) with spheres and boxes on the floor area.
inline Scene desk_room() {
  Scene s;
  const Color wall(0.75, 0.72, 0.68);
  s.objects.push_back({PlanePrimitive{Vec3(0, 0, 3.0), Vec3(0, 0, -1)}, wall});
  s.objects.push_back({PlanePrimitive{Vec3(0, 0, -2.0), Vec3(0, 0, 1)}, wall});
  s.objects.push_back({PlanePrimitive{Vec3(-2.0, 0, 0), Vec3(1, 0, 0)}, Color(0.65, 0.75, 0.70)});
  s.objects.push_back({PlanePrimitive{Vec3(2.0, 0, 0), Vec3(-1, 0, 0)}, Color(0.70, 0.68, 0.80)});
  s.objects.push_back({PlanePrimitive{Vec3(0, 0.8, 0), Vec3(0, -1, 0)}, Color(0.60, 0.55, 0.50)});  // floor (y down)
  s.objects.push_back({PlanePrimitive{Vec3(0, -1.8, 0), Vec3(0, 1, 0)}, Color(0.90, 0.90, 0.90)});
  s.objects.push_back({SpherePrimitive{Vec3(-0.35, 0.55, 1.4), 0.25}, Color(0.85, 0.35, 0.30)});
  s.objects.push_back({SpherePrimitive{Vec3(0.45, 0.62, 1.9), 0.18}, Color(0.30, 0.50, 0.85)});
  s.objects.push_back(
      {BoxPrimitive{Vec3(0.35, 0.6, 1.2), so3_exp(Vec3(0, 0.5, 0)), Vec3(0.15, 0.2, 0.12)}, Color(0.40, 0.75, 0.35)});
  s.objects.push_back(
      {BoxPrimitive{Vec3(-0.6, 0.45, 2.2), so3_exp(Vec3(0, -0.3, 0)), Vec3(0.3, 0.35, 0.25)}, Color(0.80, 0.70, 0.30)});
  return s;
}

inline Scene plane_scene(double z = 1.0) {
  Scene s;
  s.objects.push_back({PlanePrimitive{Vec3(0, 0, z), Vec3(0, 0, -1)}, Color::Constant(0.8)});
  return s;
}

inline Scene sphere_scene(const Vec3& center, double radius) {
  Scene s;
  s.objects.push_back({SpherePrimitive{center, radius}, Color::Constant(0.8)});
  return s;
}

/// Camera arc around `target`: `frames` poses sweeping `sweep_deg` degrees of
/// azimuth on a circle of radius `radius`, with a gentle vertical bob.
inline std::vector<Pose> orbit_path(int frames, const Vec3& target = Vec3(0, 0.45, 1.6), double radius = 1.3,
                                    double sweep_deg = 40.0, double height = -0.35) {
  std::vector<Pose> poses;
  poses.reserve(frames);
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? double(i) / (frames - 1) : 0.0;
    const double az = deg2rad(-0.5 * sweep_deg + sweep_deg * s);
    const Vec3 eye = target + Vec3(radius * std::sin(az), height + 0.05 * std::sin(2.0 * kPi * s), -radius * std::cos(az));
    poses.push_back(look_at(eye, target, Vec3::UnitY()));
  }
  return poses;
}

/// A synthetic sequence. Ground truth is reported relative to the first pose,
/// i.e. in the coordinate frame a tracker initialized at identity produces.
struct SyntheticSequence {
  Scene scene;
  Intrinsics intrinsics;
  std::vector<Pose> world_poses;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  double frame_interval = 1.0 / 30.0;

  std::size_t size() const { return world_poses.size(); }
  Pose origin() const { return world_poses.empty() ? Pose{} : world_poses.front(); }
  Pose ground_truth(std::size_t i) const { return origin().inverse() * world_poses[i]; }
  double timestamp(std::size_t i) const { return double(i) * frame_interval; }

  RenderedFrame render(std::size_t i) const {
    return render_synthetic(scene, world_poses[i], intrinsics, noise_sigma, seed + 0x9e3779b97f4a7c15ULL * (i + 1));
  }
};

inline SyntheticSequence desk_orbit(int frames, double noise_sigma = 0.0, std::uint64_t seed = 0,
                                    const Intrinsics& k = Intrinsics::kinect(4)) {
  return {desk_room(), k, orbit_path(frames), noise_sigma, seed};
}

}  // namespace hrbf
