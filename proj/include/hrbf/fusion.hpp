#pragma once

// Global surfel model with confidence-weighted running averages.
//
// A registered frame is associated to the model by projecting every surfel
// into the frame's image; each valid pixel merges into the closest
// compatible, not yet merged surfel found in its 3x3 neighborhood, or is
// inserted as a new surfel. Unstable surfels that stay below the confidence
// threshold for too long are culled.

#include "hrbf/frame.hpp"
#include "hrbf/kernel_set.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace hrbf {

struct Surfel {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Color color = Color::Zero();
  double support = 0.0;
  double confidence = 0.0;
  int created = 0;
  int updated = 0;
};

struct FusionOptions {
  /// Merge distance at 1 m depth; scaled linearly with the measurement depth.
  double merge_distance = 0.01;
  double merge_angle_deg = 20.0;
  double stable_confidence = 10.0;
  int unstable_window = 20;
  /// Prediction uses surfels with confidence >= min(stable_confidence,
  /// warmup_rate * frames integrated), so a young model still renders.
  double warmup_rate = 0.5;
};

struct FusionStats {
  std::size_t merged = 0;
  std::size_t inserted = 0;
  std::size_t skipped = 0;
};

/// Running average of a surfel with one measurement of confidence c.
/// Returns false (surfel untouched) when the normals cancel.
inline bool merge_measurement(Surfel& s, const Vec3& position, const Vec3& normal, const Color& color, double support,
                              double c, int frame_index) {
  const double total = s.confidence + c;
  const Vec3 n = s.confidence * s.normal + c * normal;
  const double len = n.norm();
  if (len < 1e-6 * total) return false;
  s.position = (s.confidence * s.position + c * position) / total;
  s.normal = n / len;
  s.color = (s.confidence * s.color + c * color) / total;
  s.confidence = total;
  s.support = std::min(s.support, support);
  s.updated = frame_index;
  return true;
}

class GlobalModel {
 public:
  explicit GlobalModel(FusionOptions options = {}) : options_(options) {}

  const FusionOptions& options() const { return options_; }
  std::span<const Surfel> surfels() const { return surfels_; }
  std::size_t size() const { return surfels_.size(); }
  bool empty() const { return surfels_.empty(); }
  int frames_integrated() const { return frames_integrated_; }

  double prediction_threshold() const {
    return std::min(options_.stable_confidence, options_.warmup_rate * frames_integrated_);
  }

  void add(const Surfel& s) {
    surfels_.push_back(s);
    rebuild_index();
  }

  std::vector<Kernel> kernels() const {
    std::vector<Kernel> out;
    out.reserve(surfels_.size());
    for (const Surfel& s : surfels_) out.push_back({s.position, s.normal, s.support});
    return out;
  }

  /// Fuses the valid pixels of `frame` observed from `camera_to_world`.
  FusionStats integrate(const InputFrame& frame, const Pose& camera_to_world, int frame_index) {
    const Intrinsics& k = frame.intrinsics;
    const int w = k.width, h = k.height;
    const Pose world_to_camera = camera_to_world.inverse();

    // Projective index: surfels binned by the pixel their center projects to.
    std::vector<std::uint32_t> offsets(std::size_t(w) * h + 1, 0);
    std::vector<int> pixel_of(surfels_.size(), -1);
    for (std::size_t i = 0; i < surfels_.size(); ++i) {
      const Vec3 c = world_to_camera * surfels_[i].position;
      if (c.z() <= 0.0) continue;
      const Vec2 q = k.project(c);
      const int x = int(std::lround(q.x())), y = int(std::lround(q.y()));
      if (x < 0 || y < 0 || x >= w || y >= h) continue;
      pixel_of[i] = y * w + x;
      ++offsets[pixel_of[i] + 1];
    }
    for (std::size_t i = 1; i < offsets.size(); ++i) offsets[i] += offsets[i - 1];
    std::vector<std::uint32_t> ids(offsets.back());
    {
      std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
      for (std::size_t i = 0; i < surfels_.size(); ++i)
        if (pixel_of[i] >= 0) ids[cursor[pixel_of[i]]++] = std::uint32_t(i);
    }

    std::vector<std::uint8_t> merged(surfels_.size(), 0);
    const double cos_max = std::cos(deg2rad(options_.merge_angle_deg));
    FusionStats stats;
    std::vector<Surfel> fresh;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!frame.vertices.valid(x, y) || !frame.normals.valid(x, y) || !frame.confidence.valid(x, y) ||
            !frame.supports.valid(x, y))
          continue;
        const Vec3& vc = frame.vertices(x, y);
        const Vec3 v = camera_to_world * vc;
        const Vec3 n = camera_to_world.rotation * frame.normals(x, y);
        const double c = frame.confidence(x, y);
        const Color col = frame.color.valid(x, y) ? frame.color(x, y) : Color::Zero();
        const double max_dist = options_.merge_distance * vc.z();

        std::int64_t best = -1;
        double best_dist = max_dist;
        bool blocked = false;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            const std::size_t p = std::size_t(yy) * w + xx;
            for (std::uint32_t j = offsets[p]; j < offsets[p + 1]; ++j) {
              const Surfel& s = surfels_[ids[j]];
              const double dist = (s.position - v).norm();
              if (dist >= max_dist || s.normal.dot(n) < cos_max) continue;
              if (merged[ids[j]]) {
                blocked = true;
                continue;
              }
              if (dist < best_dist || (dist == best_dist && ids[j] < best)) {
                best_dist = dist;
                best = ids[j];
              }
            }
          }
        if (best >= 0 && merge_measurement(surfels_[best], v, n, col, frame.supports(x, y), c, frame_index)) {
          merged[best] = 1;
          ++stats.merged;
        } else if (best >= 0 || blocked) {
          ++stats.skipped;
        } else {
          fresh.push_back({v, n, col, frame.supports(x, y), c, frame_index, frame_index});
          ++stats.inserted;
        }
      }
    }
    surfels_.insert(surfels_.end(), fresh.begin(), fresh.end());
    rebuild_index();
    ++frames_integrated_;
    return stats;
  }

  /// Removes surfels older than the unstable window whose confidence never
  /// reached the stability threshold. Returns the number removed.
  std::size_t cull(int current_frame) {
    const std::size_t before = surfels_.size();
    std::erase_if(surfels_, [&](const Surfel& s) {
      return s.confidence < options_.stable_confidence && current_frame - s.created > options_.unstable_window;
    });
    if (surfels_.size() != before) rebuild_index();
    return before - surfels_.size();
  }

  /// Surfel ids within `radius` of `p` (ascending).
  std::vector<std::uint32_t> neighbors(const Vec3& p, double radius) const {
    std::vector<std::uint32_t> out;
    if (surfels_.empty()) return out;
    index_.for_each_near(p, radius, [&](std::uint32_t id) {
      if ((surfels_[id].position - p).norm() <= radius) out.push_back(id);
    });
    std::sort(out.begin(), out.end());
    return out;
  }

  /// True when the spatial index holds each live surfel exactly once, in the
  /// cell of its current position.
  bool index_consistent() const {
    if (index_.size() != surfels_.size()) return false;
    std::vector<int> seen(surfels_.size(), 0);
    for (const auto& [key, ids] : index_.cells())
      for (std::uint32_t id : ids) {
        if (id >= surfels_.size() || index_.key_of(surfels_[id].position) != key) return false;
        ++seen[id];
      }
    return std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; });
  }

 private:
  void rebuild_index() {
    index_ = HashGrid(kIndexCell);
    for (std::size_t i = 0; i < surfels_.size(); ++i) index_.insert(surfels_[i].position, std::uint32_t(i));
  }

  static constexpr double kIndexCell = 0.05;

  FusionOptions options_;
  std::vector<Surfel> surfels_;
  int frames_integrated_ = 0;
  HashGrid index_{kIndexCell};
};

}  // namespace hrbf
