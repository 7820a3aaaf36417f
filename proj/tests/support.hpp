#pragma once

// Shared fixtures: kernel samplings of analytic surfaces and small helpers.

#include "hrbf/common.hpp"
#include "hrbf/kernel_set.hpp"
#include "hrbf/pixel_map.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace hrbf::test {

/// k-th nearest neighbour distance of every point (brute force on a grid of
/// buckets; O(n) buckets of `cell`).
inline std::vector<double> kth_neighbor_distance(const std::vector<Vec3>& pts, int k, double cell) {
  HashGrid grid(cell);
  for (std::size_t i = 0; i < pts.size(); ++i) grid.insert(pts[i], std::uint32_t(i));
  std::vector<double> out(pts.size());
  std::vector<double> d;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    d.clear();
    grid.for_each_near(pts[i], cell, [&](std::uint32_t j) {
      if (j != i) d.push_back((pts[j] - pts[i]).norm());
    });
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    out[i] = d[k - 1];
  }
  return out;
}

/// Fibonacci sampling of a sphere with outward normals; support =
/// support_scale x distance to the 8th neighbour.
inline std::vector<Kernel> sphere_kernels(const Vec3& center, double radius, double spacing, double support_scale) {
  const int n = int(4.0 * kPi * radius * radius / (spacing * spacing));
  std::vector<Vec3> dirs, pts;
  for (int i = 0; i < n; ++i) {
    const double phi = std::acos(1.0 - 2.0 * (i + 0.5) / n);
    const double th = kPi * (1.0 + std::sqrt(5.0)) * (i + 0.5);
    dirs.emplace_back(std::cos(th) * std::sin(phi), std::sin(th) * std::sin(phi), std::cos(phi));
    pts.push_back(center + radius * dirs.back());
  }
  const auto r8 = kth_neighbor_distance(pts, 8, 3.0 * spacing);
  std::vector<Kernel> ks;
  for (int i = 0; i < n; ++i) ks.push_back({pts[i], dirs[i], support_scale * r8[i]});
  return ks;
}

/// Regular grid on the plane z = `z` over [-half, half]^2 with normal `nz` (+1 or -1) along z.
inline std::vector<Kernel> plane_kernels(double z, double half, double spacing, double support, double nz = 1.0) {
  std::vector<Kernel> ks;
  const int n = int(std::round(half / spacing));
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j) ks.push_back({Vec3(i * spacing, j * spacing, z), Vec3(0, 0, nz), support});
  return ks;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v(g(rng), g(rng), g(rng));
  return v.normalized();
}

/// Relative difference |a - b| / max(|a|, |b|, floor).
template <class A, class B>
double rel_diff(const A& a, const B& b, double floor = 1e-12) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

inline double rel_diff(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double median(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  if (v.size() % 2) return v[m];
  return 0.5 * (v[m] + *std::max_element(v.begin(), v.begin() + m));
}

/// Same shape, same validity, equal values at valid pixels.
template <class T>
bool same_map(const PixelMap<T>& a, const PixelMap<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.valid(i) != b.valid(i)) return false;
    if (a.valid(i) && !(a[i] == b[i])) return false;
  }
  return true;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hrbf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace hrbf::test
