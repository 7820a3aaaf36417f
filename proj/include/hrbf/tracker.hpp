#pragma once

// Sequential frame-to-model loop: preprocess, predict from the last pose,
// register, fuse.

#include "hrbf/preprocess.hpp"
#include "hrbf/registration.hpp"

#include <chrono>
#include <string>
#include <vector>

namespace hrbf {

struct TrackerOptions {
  PreprocessOptions preprocess;
  RegistrationConfig registration;
  FusionOptions fusion;
  Predictor predictor = Predictor::kHrbf;
};

struct StampedPose {
  double timestamp = 0.0;
  Pose pose;
};

struct FrameReport {
  int index = 0;
  double timestamp = 0.0;
  bool tracked = false;
  Pose pose;
  int iterations = 0;
  std::size_t correspondences = 0;
  double condition = 0.0;  ///< of the last normal matrix
  std::string failure;
  /// Wall-clock seconds per stage.
  double preprocess_s = 0.0;
  double predict_s = 0.0;
  double register_s = 0.0;
  double fuse_s = 0.0;
};

class Tracker {
 public:
  explicit Tracker(TrackerOptions options = {}) : options_(options), model_(options.fusion) {}

  const TrackerOptions& options() const { return options_; }
  const GlobalModel& model() const { return model_; }
  const std::vector<StampedPose>& trajectory() const { return trajectory_; }
  const std::vector<FrameReport>& reports() const { return reports_; }
  std::size_t lost() const { return lost_; }
  const Pose& current_pose() const { return pose_; }

  /// Processes one frame; the first frame anchors the model at identity.
  const FrameReport& process(const PixelMap<double>& depth, const PixelMap<Color>& color, const Intrinsics& k,
                             double timestamp) {
    FrameReport r;
    r.index = index_;
    r.timestamp = timestamp;
    using clock = std::chrono::steady_clock;
    auto lap = [t0 = clock::now()]() mutable {
      const auto t1 = clock::now();
      const double s = std::chrono::duration<double>(t1 - t0).count();
      t0 = t1;
      return s;
    };
    const InputFrame frame = preprocess_frame(depth, color, k, timestamp, options_.preprocess);
    r.preprocess_s = lap();
    if (index_ == 0 || model_.empty()) {
      r.tracked = true;
      pose_ = Pose::identity();
    } else {
      const PredictedMaps pred = predict(options_.predictor, model_, pose_, k, options_.preprocess.prediction);
      r.predict_s = lap();
      const TrackingResult res = solve_pose(frame, pred, pose_, options_.registration);
      r.register_s = lap();
      r.iterations = res.iterations;
      r.correspondences = res.correspondences;
      r.condition = res.condition;
      r.tracked = res.success;
      r.failure = res.failure;
      if (res.success) pose_ = res.pose;
    }
    r.pose = pose_;
    if (r.tracked) {
      model_.integrate(frame, pose_, index_);
      model_.cull(index_);
      trajectory_.push_back({timestamp, pose_});
      r.fuse_s = lap();
    } else {
      ++lost_;
    }
    reports_.push_back(r);
    ++index_;
    return reports_.back();
  }

 private:
  TrackerOptions options_;
  GlobalModel model_;
  Pose pose_;
  int index_ = 0;
  std::size_t lost_ = 0;
  std::vector<StampedPose> trajectory_;
  std::vector<FrameReport> reports_;
};

}  // namespace hrbf
