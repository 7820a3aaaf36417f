#pragma once

#include "hrbf/common.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hrbf {

/// A Hermite sample: position, unit normal and support radius (meters).
struct Kernel {
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double support = 0.0;
};

inline bool is_valid_kernel(const Kernel& k) {
  return k.support > 0.0 && std::isfinite(k.support) && std::abs(k.normal.norm() - 1.0) <= 1e-9 &&
         k.center.allFinite();
}

/// Uniform hash grid over integer cell coordinates.
class HashGrid {
 public:
  HashGrid() = default;

  explicit HashGrid(double cell_size) : cell_(cell_size) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("HashGrid: cell size must be positive");
  }

  double cell_size() const { return cell_; }

  std::int64_t key_of(const Vec3& p) const { return pack(cell_coord(p)); }

  void insert(const Vec3& p, std::uint32_t id) { cells_[key_of(p)].push_back(id); }

  void clear() { cells_.clear(); }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [key, ids] : cells_) n += ids.size();
    return n;
  }

  /// Ids stored in every cell overlapping the cube [p - reach, p + reach], unsorted.
  template <class F>
  void for_each_near(const Vec3& p, double reach, F&& f) const {
    if (cells_.empty()) return;
    const Eigen::Vector3i lo = cell_coord(p - Vec3::Constant(reach));
    const Eigen::Vector3i hi = cell_coord(p + Vec3::Constant(reach));
    for (int z = lo.z(); z <= hi.z(); ++z)
      for (int y = lo.y(); y <= hi.y(); ++y)
        for (int x = lo.x(); x <= hi.x(); ++x) {
          auto it = cells_.find(pack({x, y, z}));
          if (it == cells_.end()) continue;
          for (std::uint32_t id : it->second) f(id);
        }
  }

  const std::unordered_map<std::int64_t, std::vector<std::uint32_t>>& cells() const { return cells_; }

 private:
  Eigen::Vector3i cell_coord(const Vec3& p) const {
    return {static_cast<int>(std::floor(p.x() / cell_)), static_cast<int>(std::floor(p.y() / cell_)),
            static_cast<int>(std::floor(p.z() / cell_))};
  }

  static std::int64_t pack(const Eigen::Vector3i& c) {
    constexpr std::int64_t kBias = 1 << 20;
    constexpr std::int64_t kMask = (std::int64_t{1} << 21) - 1;
    return ((c.x() + kBias) & kMask) | (((c.y() + kBias) & kMask) << 21) | (((c.z() + kBias) & kMask) << 42);
  }

  double cell_ = 1.0;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

/// Immutable set of kernels with a uniform grid (cell edge = max support)
/// that returns exactly the kernels whose support ball contains a query.
class KernelSet {
 public:
  KernelSet() = default;

  explicit KernelSet(std::vector<Kernel> kernels) : kernels_(std::move(kernels)) {
    for (const Kernel& k : kernels_) {
      if (!is_valid_kernel(k)) throw std::invalid_argument("KernelSet: kernel with non-unit normal or bad support");
      max_support_ = std::max(max_support_, k.support);
    }
    if (kernels_.empty()) return;
    grid_ = HashGrid(max_support_);
    for (std::size_t i = 0; i < kernels_.size(); ++i) grid_.insert(kernels_[i].center, static_cast<std::uint32_t>(i));
  }

  std::span<const Kernel> kernels() const { return kernels_; }
  std::size_t size() const { return kernels_.size(); }
  bool empty() const { return kernels_.empty(); }
  const Kernel& operator[](std::size_t i) const { return kernels_[i]; }
  double max_support() const { return max_support_; }

  /// Indices (ascending) of kernels with |x - center|^2 < support^2.
  std::vector<std::uint32_t> covering(const Vec3& x) const {
    std::vector<std::uint32_t> out;
    grid_.for_each_near(x, max_support_, [&](std::uint32_t id) {
      const Kernel& k = kernels_[id];
      if ((x - k.center).squaredNorm() < k.support * k.support) out.push_back(id);
    });
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::vector<Kernel> kernels_;
  HashGrid grid_;
  double max_support_ = 0.0;
};

}  // namespace hrbf
