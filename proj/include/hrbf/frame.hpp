#pragma once

// Per-frame maps and the per-pixel preprocessing operations: depth
// filtering, back-projection, central-difference normals, k-NN support
// radii and the per-pixel confidence.

#include "hrbf/camera.hpp"
#include "hrbf/pixel_map.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace hrbf {

struct InputFrame {
  Intrinsics intrinsics;
  double timestamp = 0.0;

  PixelMap<double> depth;           ///< meters, outside the validity range marked invalid
  PixelMap<double> filtered_depth;  ///< bilateral-filtered depth
  PixelMap<Color> color;
  PixelMap<double> intensity;       ///< luminance of `color`
  PixelMap<Vec3> raw_vertices;      ///< back-projected filtered depth
  PixelMap<Vec3> raw_normals;       ///< central-difference normals of raw_vertices
  PixelMap<double> supports;        ///< kernel support radius per pixel
  PixelMap<Vec3> vertices;          ///< refined by self-evaluation (falls back to raw)
  PixelMap<Vec3> normals;           ///< refined by self-evaluation (falls back to raw)
  PixelMap<Vec2> curvature;         ///< (k1, k2), 1/m
  PixelMap<double> confidence;      ///< in (0, 1]

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
};

/// Converts raw sensor units to meters; values outside [min_depth, max_depth]
/// (and zeros) become invalid rather than clamped.
inline PixelMap<double> depth_from_raw(const PixelMap<std::uint16_t>& raw, double depth_scale, double min_depth,
                                       double max_depth) {
  PixelMap<double> out(raw.width(), raw.height());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw.valid(i) || raw[i] == 0) continue;
    const double z = raw[i] / depth_scale;
    if (z >= min_depth && z <= max_depth) out.set(i, z);
  }
  return out;
}

inline PixelMap<double> clip_depth_range(const PixelMap<double>& depth, double min_depth, double max_depth) {
  PixelMap<double> out(depth.width(), depth.height());
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (depth.valid(i) && depth[i] >= min_depth && depth[i] <= max_depth) out.set(i, depth[i]);
  return out;
}

/// Edge-preserving depth smoothing over a (2 radius + 1)^2 stencil.
/// Invalid pixels stay invalid and carry no weight.
inline PixelMap<double> bilateral_filter(const PixelMap<double>& depth, double sigma_s = 4.5, double sigma_r = 0.03,
                                         int radius = 3) {
  const int w = depth.width(), h = depth.height();
  PixelMap<double> out(w, h);
  const double inv_s = 1.0 / (2.0 * sigma_s * sigma_s);
  const double inv_r = 1.0 / (2.0 * sigma_r * sigma_r);
  std::vector<double> spatial((2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      spatial[(dy + radius) * (2 * radius + 1) + dx + radius] = std::exp(-(dx * dx + dy * dy) * inv_s);

#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!depth.valid(x, y)) continue;
      const double d0 = depth(x, y);
      double sum = 0.0, wsum = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (!depth.valid(xx, yy)) continue;
          const double dd = depth(xx, yy) - d0;
          const double wt = spatial[(dy + radius) * (2 * radius + 1) + dx + radius] * std::exp(-dd * dd * inv_r);
          sum += wt * depth(xx, yy);
          wsum += wt;
        }
      }
      out.set(x, y, sum / wsum);
    }
  }
  return out;
}

/// V(u) = D(u) K^-1 (u, 1).
inline PixelMap<Vec3> back_project(const PixelMap<double>& depth, const Intrinsics& k) {
  PixelMap<Vec3> out(depth.width(), depth.height());
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x)
      if (depth.valid(x, y)) out.set(x, y, depth(x, y) * k.unproject(x, y));
  return out;
}

/// Normalized cross product of central-difference tangents, oriented so that
/// n . v < 0 (towards the camera). Border pixels and incomplete stencils are invalid.
inline PixelMap<Vec3> normals_from_vertices(const PixelMap<Vec3>& v) {
  const int w = v.width(), h = v.height();
  PixelMap<Vec3> out(w, h);
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      if (!v.valid(x, y) || !v.valid(x - 1, y) || !v.valid(x + 1, y) || !v.valid(x, y - 1) || !v.valid(x, y + 1))
        continue;
      const Vec3 dx = v(x + 1, y) - v(x - 1, y);
      const Vec3 dy = v(x, y + 1) - v(x, y - 1);
      Vec3 n = dx.cross(dy);
      const double len = n.norm();
      if (len < 1e-12) continue;
      n /= len;
      if (n.dot(v(x, y)) > 0.0) n = -n;
      out.set(x, y, n);
    }
  }
  return out;
}

/// Distance from V(u) to its k-th nearest valid vertex inside a window x window
/// patch, clamped to [r_min, r_max]; invalid with fewer than k neighbors.
inline PixelMap<double> support_radii(const PixelMap<Vec3>& v, int k = 8, int window = 7, double r_min = 0.002,
                                      double r_max = 0.5) {
  const int w = v.width(), h = v.height();
  const int half = window / 2;
  PixelMap<double> out(w, h);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    std::vector<double> dist;
    dist.reserve(window * window);
    for (int x = 0; x < w; ++x) {
      if (!v.valid(x, y)) continue;
      dist.clear();
      const Vec3& p = v(x, y);
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (v.valid(x + dx, y + dy)) dist.push_back((v(x + dx, y + dy) - p).squaredNorm());
        }
      if (static_cast<int>(dist.size()) < k) continue;
      std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
      out.set(x, y, std::clamp(std::sqrt(dist[k - 1]), r_min, r_max));
    }
  }
  return out;
}

/// Distortion term c_d = exp(-gamma^2 / (2 sigma^2)), gamma = distance to the
/// image center over the image diagonal (both measured between pixel centers).
inline double radial_confidence(double x, double y, int width, int height, double sigma = 0.6) {
  const double ex = 0.5 * (width - 1), ey = 0.5 * (height - 1);
  const double diag = std::hypot(double(width - 1), double(height - 1));
  const double gamma = std::hypot(x - ex, y - ey) / diag;
  return std::exp(-gamma * gamma / (2.0 * sigma * sigma));
}

/// Reconstruction term c_r = exp(-epsilon / (eta |grad f . n_D|)). The field
/// gradient carries a global 1/eta factor; eta restores a per-square-meter
/// kernel-density scale on which epsilon is expressed.
inline double reconstruction_confidence(const Vec3& gradient, const Vec3& depth_normal, double epsilon = 1000.0,
                                        double eta = 1.0e6) {
  const double response = eta * std::abs(gradient.dot(depth_normal));
  if (!(response > 0.0)) return 0.0;
  return std::exp(-epsilon / response);
}

/// c = c_r c_d per pixel; invalid where the gradient or depth normal is
/// missing or the product underflows to zero.
inline PixelMap<double> confidence_map(const PixelMap<Vec3>& gradients, const PixelMap<Vec3>& depth_normals,
                                       double epsilon = 1000.0, double sigma = 0.6, double eta = 1.0e6) {
  const int w = gradients.width(), h = gradients.height();
  PixelMap<double> out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!gradients.valid(x, y) || !depth_normals.valid(x, y)) continue;
      const double c = reconstruction_confidence(gradients(x, y), depth_normals(x, y), epsilon, eta) *
                       radial_confidence(x, y, w, h, sigma);
      if (c > 0.0) out.set(x, y, std::min(c, 1.0));
    }
  return out;
}

inline PixelMap<double> intensity_map(const PixelMap<Color>& color) {
  PixelMap<double> out(color.width(), color.height());
  for (std::size_t i = 0; i < color.size(); ++i)
    if (color.valid(i)) out.set(i, luminance(color[i]));
  return out;
}

}  // namespace hrbf
