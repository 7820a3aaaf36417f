#pragma once

// Ray-intersection surface evaluation against a kernel cloud. A viewing ray
// keeps the kernels whose support ball it pierces, groups them by the ray
// parameter of their projected centers and retains the group nearest the
// camera. The zero crossing of the field built from that group is bracketed
// by equispaced probes and refined by bisection.

#include "hrbf/camera.hpp"
#include "hrbf/field.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

namespace hrbf {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  ///< unit length

  Vec3 at(double t) const { return origin + t * direction; }
};

struct RaycastOptions {
  double eta = kDefaultEta;
  /// Consecutive projected centers further apart than
  /// max(min_depth_gap, gap_support_factor * median support) split groups.
  double min_depth_gap = 0.1;
  double gap_support_factor = 2.0;
  int probes = 8;
  double tolerance = 1e-5;
  int max_iterations = 32;
};

struct RaySelection {
  std::vector<std::uint32_t> kernels;  ///< ascending kernel ids
  double t_near = 0.0;
  double t_far = 0.0;
  double max_support = 0.0;
  double gap = 0.0;
};

struct SurfaceHit {
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  double t_lo = 0.0;  ///< final bracket, field > 0 at t_lo
  double t_hi = 0.0;  ///< field < 0 at t_hi
  int iterations = 0;
};

/// Ray parameter of a kernel's projected center, or nullopt when the ray
/// misses its support ball or the center lies behind the origin.
inline std::optional<double> ray_kernel_parameter(const Ray& ray, const Kernel& k) {
  const Vec3 oc = k.center - ray.origin;
  const double t = oc.dot(ray.direction);
  if (t <= 0.0) return std::nullopt;
  const double perp2 = oc.squaredNorm() - t * t;
  if (perp2 >= k.support * k.support) return std::nullopt;
  return t;
}

/// All clusters along the ray, nearest first. Consecutive projected centers
/// closer than the gap belong to the same cluster.
inline std::vector<RaySelection> select_ray_clusters(const Ray& ray, std::span<const Kernel> all,
                                                     std::span<const std::uint32_t> candidates,
                                                     const RaycastOptions& opt = {}) {
  struct Hit {
    double t;
    std::uint32_t id;
  };
  std::vector<Hit> hits;
  hits.reserve(candidates.size());
  std::vector<double> supports;
  supports.reserve(candidates.size());
  for (std::uint32_t id : candidates) {
    if (auto t = ray_kernel_parameter(ray, all[id])) {
      hits.push_back({*t, id});
      supports.push_back(all[id].support);
    }
  }
  std::vector<RaySelection> out;
  if (hits.empty()) return out;

  const std::size_t mid = supports.size() / 2;
  std::nth_element(supports.begin(), supports.begin() + mid, supports.end());
  double median = supports[mid];
  if (supports.size() % 2 == 0) {
    const double lower = *std::max_element(supports.begin(), supports.begin() + mid);
    median = 0.5 * (median + lower);
  }
  const double gap = std::max(opt.min_depth_gap, opt.gap_support_factor * median);

  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.t < b.t || (a.t == b.t && a.id < b.id); });
  std::size_t begin = 0;
  while (begin < hits.size()) {
    std::size_t end = begin + 1;
    while (end < hits.size() && hits[end].t - hits[end - 1].t < gap) ++end;
    RaySelection sel;
    sel.t_near = hits[begin].t;
    sel.t_far = hits[end - 1].t;
    sel.gap = gap;
    sel.kernels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      sel.kernels.push_back(hits[i].id);
      sel.max_support = std::max(sel.max_support, all[hits[i].id].support);
    }
    std::sort(sel.kernels.begin(), sel.kernels.end());
    out.push_back(std::move(sel));
    begin = end;
  }
  return out;
}

/// The cluster nearest the ray origin.
inline std::optional<RaySelection> select_ray_kernels(const Ray& ray, std::span<const Kernel> all,
                                                      std::span<const std::uint32_t> candidates,
                                                      const RaycastOptions& opt = {}) {
  auto clusters = select_ray_clusters(ray, all, candidates, opt);
  if (clusters.empty()) return std::nullopt;
  return std::move(clusters.front());
}

/// Brute-force candidate list over a whole kernel set.
inline std::optional<RaySelection> select_ray_kernels(const Ray& ray, const KernelSet& ks,
                                                      const RaycastOptions& opt = {}) {
  std::vector<std::uint32_t> all(ks.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
  return select_ray_kernels(ray, ks.kernels(), all, opt);
}

/// First positive-to-negative crossing of the selection's field inside the
/// padded interval [t_near - r_max, t_far + r_max].
inline std::optional<SurfaceHit> bisect_surface(const Ray& ray, const RaySelection& sel, std::span<const Kernel> all,
                                                const RaycastOptions& opt = {}) {
  const FieldOptions fopt{opt.eta, 0.0};
  auto value_at = [&](double t) -> std::optional<double> {
    auto s = sample_field(ray.at(t), all, sel.kernels, fopt, FieldOrder::kValue);
    if (!s) return std::nullopt;
    return s->value;
  };

  const double a = std::max(0.0, sel.t_near - sel.max_support);
  const double b = sel.t_far + sel.max_support;
  const int n = std::max(2, opt.probes);
  double t_prev = a;
  std::optional<double> f_prev = value_at(a);
  double lo = 0.0, hi = 0.0;
  bool bracketed = false;
  for (int i = 1; i < n; ++i) {
    const double t = a + (b - a) * i / (n - 1);
    const auto f = value_at(t);
    if (f_prev && f && *f_prev > 0.0 && *f < 0.0) {
      lo = t_prev;
      hi = t;
      bracketed = true;
      break;
    }
    t_prev = t;
    f_prev = f;
  }
  if (!bracketed) return std::nullopt;

  SurfaceHit hit;
  while (hi - lo >= opt.tolerance && hit.iterations < opt.max_iterations) {
    const double m = 0.5 * (lo + hi);
    const auto f = value_at(m);
    ++hit.iterations;
    if (!f) return std::nullopt;
    if (*f > 0.0) {
      lo = m;
    } else if (*f < 0.0) {
      hi = m;
    } else {
      lo = hi = m;
      break;
    }
  }
  hit.t_lo = lo;
  hit.t_hi = hi;
  hit.t = 0.5 * (lo + hi);
  hit.point = ray.at(hit.t);
  return hit;
}

/// Per-pixel candidate lists (CSR): every kernel whose support ball's
/// projection may cover the pixel center. Built from the projected corners of
/// each ball's camera-aligned bounding box, so no kernel pierced by a pixel
/// ray is missed.
class ProjectiveBins {
 public:
  static ProjectiveBins build(std::span<const Kernel> kernels, const Pose& camera_to_world, const Intrinsics& k,
                              double near_plane = 0.01) {
    ProjectiveBins bins;
    bins.width_ = k.width;
    bins.height_ = k.height;
    const Pose world_to_camera = camera_to_world.inverse();
    struct Box {
      int x0, x1, y0, y1;
    };
    std::vector<Box> boxes(kernels.size(), Box{0, -1, 0, -1});
    std::vector<std::uint32_t> counts(std::size_t(k.width) * k.height + 1, 0);
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      const Vec3 c = world_to_camera * kernels[i].center;
      const double r = kernels[i].support;
      if (c.z() - r < near_plane) continue;
      double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
      for (int corner = 0; corner < 8; ++corner) {
        const Vec3 p = c + Vec3((corner & 1) ? r : -r, (corner & 2) ? r : -r, (corner & 4) ? r : -r);
        const Vec2 q = k.project(p);
        minx = std::min(minx, q.x());
        maxx = std::max(maxx, q.x());
        miny = std::min(miny, q.y());
        maxy = std::max(maxy, q.y());
      }
      if (maxx < 0.0 || maxy < 0.0 || minx > k.width - 1 || miny > k.height - 1) continue;
      Box bx{std::max(0, int(std::ceil(minx))), std::min(k.width - 1, int(std::floor(maxx))),
             std::max(0, int(std::ceil(miny))), std::min(k.height - 1, int(std::floor(maxy)))};
      boxes[i] = bx;
      for (int y = bx.y0; y <= bx.y1; ++y)
        for (int x = bx.x0; x <= bx.x1; ++x) ++counts[std::size_t(y) * k.width + x + 1];
    }
    for (std::size_t i = 1; i < counts.size(); ++i) counts[i] += counts[i - 1];
    bins.offsets_ = counts;
    bins.ids_.resize(counts.back());
    std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      const Box& bx = boxes[i];
      for (int y = bx.y0; y <= bx.y1; ++y)
        for (int x = bx.x0; x <= bx.x1; ++x) bins.ids_[cursor[std::size_t(y) * k.width + x]++] = std::uint32_t(i);
    }
    return bins;
  }

  std::span<const std::uint32_t> at(int x, int y) const {
    const std::size_t p = std::size_t(y) * width_ + x;
    return {ids_.data() + offsets_[p], ids_.data() + offsets_[p + 1]};
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t total() const { return ids_.size(); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> ids_;
};

/// Unit viewing ray through a pixel center, in the frame of `camera_to_world`.
inline Ray pixel_ray(const Pose& camera_to_world, const Intrinsics& k, int x, int y) {
  return {camera_to_world.translation, (camera_to_world.rotation * k.unproject(x, y)).normalized()};
}

}  // namespace hrbf
