#pragma once

// Vertex/normal map prediction by raycasting an HRBF field (global model or
// the frame's own vertices) and the surfel-splatting baseline.

#include "hrbf/curvature.hpp"
#include "hrbf/frame.hpp"
#include "hrbf/fusion.hpp"
#include "hrbf/raycast.hpp"

#include <limits>
#include <span>
#include <vector>

namespace hrbf {

/// Maps rendered from `pose`. Vertices and normals live in the frame of the
/// kernels (world for the model, camera for self-evaluation).
struct PredictedMaps {
  Pose pose;
  PixelMap<Vec3> vertices;
  PixelMap<Vec3> normals;
  PixelMap<Color> colors;
  PixelMap<double> intensity;
  PixelMap<double> confidence;
  PixelMap<double> support;
  PixelMap<Vec2> curvature;  ///< (k1, k2); invalid where degenerate
  PixelMap<Vec3> gradients;  ///< field gradient at the vertex

  PredictedMaps() = default;
  PredictedMaps(int w, int h)
      : vertices(w, h), normals(w, h), colors(w, h), intensity(w, h), confidence(w, h), support(w, h),
        curvature(w, h), gradients(w, h) {}

  int width() const { return vertices.width(); }
  int height() const { return vertices.height(); }
  bool valid(int x, int y) const { return vertices.valid(x, y); }
  std::size_t count_valid() const { return vertices.count_valid(); }
};

enum class Predictor { kHrbf, kSplat };

struct PredictionOptions {
  RaycastOptions raycast;
  /// Core fraction for the curvature Hessian (see FieldOptions::hessian_core).
  double hessian_core = 0.5;
  CurvatureOptions curvature;
  /// Try farther clusters when the nearest one holds no zero crossing.
  bool fallthrough_clusters = true;
};

/// Per-kernel attributes carried over to predicted pixels.
struct KernelAttributes {
  std::span<const Color> colors;
  std::span<const double> confidence;
};

namespace detail {

inline void write_attributes(PredictedMaps& out, int x, int y, std::span<const Kernel> kernels,
                             const KernelAttributes& attrs, std::uint32_t id) {
  const Color c = attrs.colors.empty() ? Color::Zero() : attrs.colors[id];
  out.colors.set(x, y, c);
  out.intensity.set(x, y, luminance(c));
  out.confidence.set(x, y, attrs.confidence.empty() ? 1.0 : attrs.confidence[id]);
  out.support.set(x, y, kernels[id].support);
}

inline std::uint32_t nearest_kernel(const Vec3& p, std::span<const Kernel> kernels,
                                    std::span<const std::uint32_t> ids) {
  std::uint32_t best = ids.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t id : ids) {
    const double d = (kernels[id].center - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

}  // namespace detail

/// Raycasts the field of `kernels` through every pixel of a camera at `pose`.
inline PredictedMaps raycast_maps(std::span<const Kernel> kernels, const KernelAttributes& attrs, const Pose& pose,
                                  const Intrinsics& k, const PredictionOptions& opt = {}) {
  PredictedMaps out(k.width, k.height);
  out.pose = pose;
  if (kernels.empty()) return out;
  const ProjectiveBins bins = ProjectiveBins::build(kernels, pose, k);
  const FieldOptions fopt{opt.raycast.eta, opt.hessian_core};

#pragma omp parallel for schedule(dynamic, 4)
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const auto candidates = bins.at(x, y);
      if (candidates.empty()) continue;
      const Ray ray = pixel_ray(pose, k, x, y);
      // Nearest cluster first; a cluster the ray passes without a sign change
      // (grazing past large supports) hands over to the next one.
      const auto clusters = select_ray_clusters(ray, kernels, candidates, opt.raycast);
      const RaySelection* sel = nullptr;
      std::optional<SurfaceHit> hit;
      for (const RaySelection& c : clusters) {
        hit = bisect_surface(ray, c, kernels, opt.raycast);
        if (hit) {
          sel = &c;
          break;
        }
        if (!opt.fallthrough_clusters) break;
      }
      if (!hit) continue;
      const auto s = sample_field(hit->point, kernels, sel->kernels, fopt, FieldOrder::kHessian);
      if (!s) continue;
      const double gn = s->gradient.norm();
      if (!(gn > 0.0)) continue;
      Vec3 n = s->gradient / gn;
      if (n.dot(ray.direction) > 0.0) n = -n;
      out.vertices.set(x, y, hit->point);
      out.normals.set(x, y, n);
      out.gradients.set(x, y, s->gradient);
      if (const auto c = curvatures(*s, opt.curvature)) out.curvature.set(x, y, Vec2(c->k1, c->k2));
      detail::write_attributes(out, x, y, kernels, attrs, detail::nearest_kernel(hit->point, kernels, sel->kernels));
    }
  }
  return out;
}

/// Nearest splat along each ray: discs of radius `support` around each kernel
/// center in the kernel's tangent plane.
inline PredictedMaps splat_maps(std::span<const Kernel> kernels, const KernelAttributes& attrs, const Pose& pose,
                                const Intrinsics& k) {
  PredictedMaps out(k.width, k.height);
  out.pose = pose;
  if (kernels.empty()) return out;
  const ProjectiveBins bins = ProjectiveBins::build(kernels, pose, k);

#pragma omp parallel for schedule(dynamic, 4)
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Ray ray = pixel_ray(pose, k, x, y);
      double best_t = std::numeric_limits<double>::infinity();
      std::int64_t best = -1;
      for (std::uint32_t id : bins.at(x, y)) {
        const Kernel& kn = kernels[id];
        const double denom = kn.normal.dot(ray.direction);
        if (std::abs(denom) < 1e-9) continue;
        const double t = kn.normal.dot(kn.center - ray.origin) / denom;
        if (t <= 0.0) continue;
        if ((ray.at(t) - kn.center).squaredNorm() > kn.support * kn.support) continue;
        if (t < best_t || (t == best_t && id < best)) {
          best_t = t;
          best = id;
        }
      }
      if (best < 0) continue;
      const Kernel& kn = kernels[best];
      Vec3 n = kn.normal;
      if (n.dot(ray.direction) > 0.0) n = -n;
      out.vertices.set(x, y, ray.at(best_t));
      out.normals.set(x, y, n);
      out.curvature.set(x, y, Vec2::Zero());
      detail::write_attributes(out, x, y, kernels, attrs, std::uint32_t(best));
    }
  }
  return out;
}

struct ModelView {
  std::vector<Kernel> kernels;
  std::vector<Color> colors;
  std::vector<double> confidence;

  /// Surfels below `min_confidence` are left out.
  explicit ModelView(const GlobalModel& model, double min_confidence = 0.0) {
    kernels.reserve(model.size());
    colors.reserve(model.size());
    confidence.reserve(model.size());
    for (const Surfel& s : model.surfels()) {
      if (s.confidence < min_confidence) continue;
      kernels.push_back({s.position, s.normal, s.support});
      colors.push_back(s.color);
      confidence.push_back(s.confidence);
    }
  }

  KernelAttributes attributes() const { return {colors, confidence}; }
};

/// Renders the model's stable surfels (see GlobalModel::prediction_threshold).
inline PredictedMaps predict_model_maps(const GlobalModel& model, const Pose& pose, const Intrinsics& k,
                                        const PredictionOptions& opt = {}) {
  const ModelView view(model, model.prediction_threshold());
  return raycast_maps(view.kernels, view.attributes(), pose, k, opt);
}

inline PredictedMaps splat_baseline(const GlobalModel& model, const Pose& pose, const Intrinsics& k) {
  const ModelView view(model, model.prediction_threshold());
  return splat_maps(view.kernels, view.attributes(), pose, k);
}

inline PredictedMaps predict(Predictor method, const GlobalModel& model, const Pose& pose, const Intrinsics& k,
                             const PredictionOptions& opt = {}) {
  return method == Predictor::kHrbf ? predict_model_maps(model, pose, k, opt) : splat_baseline(model, pose, k);
}

/// Self-evaluation: the frame's raw vertices, normals and supports become the
/// kernels (camera coordinates). Refined vertices and normals are written to
/// frame.vertices / frame.normals, falling back to the raw values where the
/// cast fails or lands outside the pixel's own support; curvature comes from
/// the field at the final vertex. Returns the field gradient at every final
/// vertex that has support.
inline PixelMap<Vec3> predict_frame_maps(InputFrame& frame, const PredictionOptions& opt = {}) {
  const int w = frame.width(), h = frame.height();
  std::vector<Kernel> kernels;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (frame.raw_vertices.valid(x, y) && frame.raw_normals.valid(x, y) && frame.supports.valid(x, y))
        kernels.push_back({frame.raw_vertices(x, y), frame.raw_normals(x, y), frame.supports(x, y)});

  const PredictedMaps cast = raycast_maps(kernels, {}, Pose::identity(), frame.intrinsics, opt);
  const ProjectiveBins bins = ProjectiveBins::build(kernels, Pose::identity(), frame.intrinsics);
  const FieldOptions fopt{opt.raycast.eta, opt.hessian_core};

  frame.vertices = PixelMap<Vec3>(w, h);
  frame.normals = PixelMap<Vec3>(w, h);
  frame.curvature = PixelMap<Vec2>(w, h);
  PixelMap<Vec3> gradients(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!frame.raw_vertices.valid(x, y)) continue;
      // A hit farther than the pixel's own support from its raw vertex belongs
      // to another surface seen past a silhouette; keep the raw sample.
      if (cast.valid(x, y) && frame.supports.valid(x, y) &&
          (cast.vertices(x, y) - frame.raw_vertices(x, y)).norm() <= frame.supports(x, y)) {
        frame.vertices.set(x, y, cast.vertices(x, y));
        frame.normals.set(x, y, cast.normals(x, y));
        gradients.set(x, y, cast.gradients(x, y));
        if (cast.curvature.valid(x, y)) frame.curvature.set(x, y, cast.curvature(x, y));
        continue;
      }
      frame.vertices.set(x, y, frame.raw_vertices(x, y));
      if (frame.raw_normals.valid(x, y)) frame.normals.set(x, y, frame.raw_normals(x, y));
      const auto s = sample_field(frame.raw_vertices(x, y), kernels, bins.at(x, y), fopt, FieldOrder::kHessian);
      if (!s) continue;
      gradients.set(x, y, s->gradient);
      if (const auto c = curvatures(*s, opt.curvature)) frame.curvature.set(x, y, Vec2(c->k1, c->k2));
    }
  }
  return gradients;
}

}  // namespace hrbf
