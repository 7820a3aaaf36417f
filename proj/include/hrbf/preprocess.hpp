#pragma once

#include "hrbf/prediction.hpp"

namespace hrbf {

struct PreprocessOptions {
  double min_depth = 0.3;
  double max_depth = 8.0;
  /// Spatial sigma in pixels at `bilateral_reference_width`; scaled with the
  /// actual image width so the filter covers the same field of view.
  double bilateral_sigma_s = 4.5;
  int bilateral_reference_width = 640;
  double bilateral_sigma_r = 0.03;
  int bilateral_radius = 3;
  int support_neighbors = 8;
  int support_window = 7;
  double support_min = 0.002;
  double support_max = 0.5;
  double epsilon = 1000.0;
  double radial_sigma = 0.6;
  PredictionOptions prediction;
};

/// Depth (meters) + color -> fully populated InputFrame.
inline InputFrame preprocess_frame(const PixelMap<double>& depth, const PixelMap<Color>& color, const Intrinsics& k,
                                   double timestamp, const PreprocessOptions& opt = {}) {
  InputFrame f;
  f.intrinsics = k;
  f.timestamp = timestamp;
  f.depth = clip_depth_range(depth, opt.min_depth, opt.max_depth);
  const double sigma_s = opt.bilateral_sigma_s * k.width / opt.bilateral_reference_width;
  f.filtered_depth = bilateral_filter(f.depth, sigma_s, opt.bilateral_sigma_r, opt.bilateral_radius);
  f.color = color;
  f.intensity = intensity_map(color);
  f.raw_vertices = back_project(f.filtered_depth, k);
  f.raw_normals = normals_from_vertices(f.raw_vertices);
  f.supports = support_radii(f.raw_vertices, opt.support_neighbors, opt.support_window, opt.support_min,
                             opt.support_max);
  const PixelMap<Vec3> gradients = predict_frame_maps(f, opt.prediction);
  f.confidence = confidence_map(gradients, f.raw_normals, opt.epsilon, opt.radial_sigma, opt.prediction.raycast.eta);
  return f;
}

}  // namespace hrbf
