#pragma once

// Trajectory and surface metrics plus the noise-robustness study driver.

#include "hrbf/synthetic.hpp"
#include "hrbf/tracker.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrbf {

struct TrajectoryError {
  std::vector<double> errors;  ///< per matched pose, meters
  double rmse = 0.0;
  Mat4 alignment = Mat4::Identity();  ///< maps estimated positions onto ground truth
  std::size_t matched = 0;
};

/// For each estimated pose, the ground-truth pose with the nearest timestamp
/// within `max_dt` seconds. Returns index pairs (estimated, ground truth).
inline std::vector<std::pair<std::size_t, std::size_t>> associate_timestamps(const std::vector<StampedPose>& est,
                                                                             const std::vector<StampedPose>& gt,
                                                                             double max_dt = 0.02) {
  std::vector<std::size_t> order(gt.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gt[a].timestamp < gt[b].timestamp; });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].timestamp;
    auto it = std::lower_bound(order.begin(), order.end(), t,
                               [&](std::size_t g, double v) { return gt[g].timestamp < v; });
    std::size_t best = gt.size();
    double best_dt = max_dt;
    for (auto c : {it, it == order.begin() ? order.end() : it - 1}) {
      if (c == order.end()) continue;
      const double dt = std::abs(gt[*c].timestamp - t);
      if (dt <= best_dt) {
        best_dt = dt;
        best = *c;
      }
    }
    if (best < gt.size()) out.emplace_back(i, best);
  }
  return out;
}

/// Absolute trajectory error after a least-squares rigid alignment.
inline TrajectoryError ate_rmse(const std::vector<StampedPose>& est, const std::vector<StampedPose>& gt,
                                double max_dt = 0.02) {
  const auto pairs = associate_timestamps(est, gt, max_dt);
  if (pairs.size() < 3) throw std::invalid_argument("ate_rmse: fewer than 3 associated poses");
  Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    src.col(i) = est[pairs[i].first].pose.translation;
    dst.col(i) = gt[pairs[i].second].pose.translation;
  }
  TrajectoryError e;
  e.matched = pairs.size();
  e.alignment = Eigen::umeyama(src, dst, false);
  const Mat3 r = e.alignment.topLeftCorner<3, 3>();
  const Vec3 t = e.alignment.topRightCorner<3, 1>();
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double d = (r * src.col(i) + t - dst.col(i)).norm();
    e.errors.push_back(d);
    sum += d * d;
  }
  e.rmse = std::sqrt(sum / double(pairs.size()));
  return e;
}

struct SurfaceStats {
  std::size_t count = 0;
  double rms = 0.0;
  double median = 0.0;
  double max = 0.0;
};

inline SurfaceStats summarize_distances(std::vector<double> d) {
  if (d.empty()) throw std::invalid_argument("surface_error: no points");
  SurfaceStats s;
  s.count = d.size();
  double sum = 0.0;
  for (double v : d) sum += v * v;
  s.rms = std::sqrt(sum / double(d.size()));
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  s.median = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  s.max = d.back();
  return s;
}

/// Distances from points (mapped to scene coordinates by `to_scene`) to the scene.
inline SurfaceStats surface_error(const std::vector<Vec3>& points, const Scene& scene, const Pose& to_scene = {}) {
  std::vector<double> d;
  d.reserve(points.size());
  for (const Vec3& p : points) d.push_back(scene.distance(to_scene * p));
  return summarize_distances(std::move(d));
}

inline SurfaceStats surface_error(const PixelMap<Vec3>& vertices, const Scene& scene, const Pose& to_scene = {}) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < vertices.size(); ++i)
    if (vertices.valid(i)) pts.push_back(vertices[i]);
  return surface_error(pts, scene, to_scene);
}

inline SurfaceStats surface_error(const GlobalModel& model, const Scene& scene, const Pose& to_scene = {}) {
  std::vector<Vec3> pts;
  for (const Surfel& s : model.surfels()) pts.push_back(s.position);
  return surface_error(pts, scene, to_scene);
}

inline const char* predictor_name(Predictor p) { return p == Predictor::kHrbf ? "hrbf" : "splat"; }

/// Fuses the first `frames` frames at ground-truth poses.
inline GlobalModel fuse_ground_truth(const SyntheticSequence& seq, std::size_t frames,
                                     const TrackerOptions& opt = {}) {
  GlobalModel model(opt.fusion);
  for (std::size_t i = 0; i < std::min(frames, seq.size()); ++i) {
    const RenderedFrame r = seq.render(i);
    const InputFrame f = preprocess_frame(r.depth, r.color, seq.intrinsics, seq.timestamp(i), opt.preprocess);
    model.integrate(f, seq.ground_truth(i), int(i));
    model.cull(int(i));
  }
  return model;
}

struct TrackingRun {
  std::vector<double> frame_errors;  ///< |t_est - t_gt| per frame; infinity when not tracked
  std::size_t frames_lost = 0;
  std::size_t frames_total = 0;
  double ate_rmse = 0.0;
  std::vector<StampedPose> trajectory;
};

/// Tracks a synthetic sequence. A frame is lost when registration fails or
/// its translational error exceeds `clip` meters.
inline TrackingRun run_tracking(const SyntheticSequence& seq, std::size_t frames, const TrackerOptions& opt,
                                double clip = 0.05) {
  Tracker tracker(opt);
  TrackingRun run;
  std::vector<StampedPose> gt;
  const std::size_t n = std::min(frames, seq.size());
  for (std::size_t i = 0; i < n; ++i) {
    const RenderedFrame r = seq.render(i);
    const FrameReport& rep = tracker.process(r.depth, r.color, seq.intrinsics, seq.timestamp(i));
    gt.push_back({seq.timestamp(i), seq.ground_truth(i)});
    const double err = rep.tracked ? (rep.pose.translation - seq.ground_truth(i).translation).norm()
                                   : std::numeric_limits<double>::infinity();
    run.frame_errors.push_back(err);
    if (!(err <= clip)) ++run.frames_lost;
  }
  run.frames_total = n;
  run.trajectory = tracker.trajectory();
  if (run.trajectory.size() >= 3) run.ate_rmse = ate_rmse(run.trajectory, gt).rmse;
  return run;
}

struct StudyRow {
  double sigma = 0.0;
  std::string method;
  double rms_pred_m = 0.0;
  double ate_rmse_m = 0.0;
  std::size_t frames_lost = 0;
  std::size_t frames_total = 0;
};

struct NoiseStudyOptions {
  std::vector<double> sigmas{3.0, 6.0, 12.0};
  std::vector<Predictor> methods{Predictor::kHrbf, Predictor::kSplat};
  std::size_t fuse_frames = 68;
  std::size_t track_frames = 100;
  double clip = 0.05;
  TrackerOptions tracker;
};

/// For each sigma: fuse at ground truth and compare predicted-map error at
/// the last fused pose, then track the sequence with each predictor.
inline std::vector<StudyRow> run_noise_study(const SyntheticSequence& base, const NoiseStudyOptions& opt) {
  std::vector<StudyRow> rows;
  for (double sigma : opt.sigmas) {
    SyntheticSequence seq = base;
    seq.noise_sigma = sigma;
    const std::size_t fused = std::min(opt.fuse_frames, seq.size());
    GlobalModel model;
    if (fused > 0) model = fuse_ground_truth(seq, fused, opt.tracker);
    const Pose view = fused > 0 ? seq.ground_truth(fused - 1) : Pose{};
    for (Predictor method : opt.methods) {
      StudyRow row;
      row.sigma = sigma;
      row.method = predictor_name(method);
      if (!model.empty()) {
        const PredictedMaps pred = predict(method, model, view, seq.intrinsics, opt.tracker.preprocess.prediction);
        row.rms_pred_m = surface_error(pred.vertices, seq.scene, seq.origin()).rms;
      }
      if (opt.track_frames > 0) {
        TrackerOptions topt = opt.tracker;
        topt.predictor = method;
        const TrackingRun run = run_tracking(seq, opt.track_frames, topt, opt.clip);
        row.ate_rmse_m = run.ate_rmse;
        row.frames_lost = run.frames_lost;
        row.frames_total = run.frames_total;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace hrbf
