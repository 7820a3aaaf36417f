#pragma once

// Frame-to-model pose estimation. Correspondences come from projective
// association scored by a position/normal/curvature dissimilarity; the pose
// minimizes a curvature- and confidence-weighted point-to-plane term plus a
// photometric term with Gauss-Newton on a left-multiplied twist.

#include "hrbf/prediction.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace hrbf {

struct RegistrationConfig {
  int window = 5;
  double mu_d = 1.0 / 3.0;
  double mu_a = 1.0 / 3.0;
  double mu_c = 1.0 / 3.0;
  double w_geom = 10.0;
  int max_iterations = 20;
  double prune_distance = 0.1;
  double prune_angle_deg = 20.0;
  double kappa_ref = 20.0;
  double z_ref = 1.0;
  double w_floor = 0.5;
  double huber_delta = 0.1;
  bool use_photometric = true;
  double update_tolerance = 1e-7;
  double max_condition = 1e6;
  std::size_t min_correspondences = 6;
  int max_backtracks = 8;
};

/// Point attributes entering the dissimilarity.
struct PointAttrs {
  Vec3 vertex = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec2 curvature = Vec2::Zero();
};

struct Correspondence {
  int src_x = 0, src_y = 0;
  int tgt_x = 0, tgt_y = 0;
  double dissimilarity = 0.0;
  double weight = 0.0;
};

/// gamma_d = mu_d I_d + mu_a I_a + mu_c I_c.
inline double dissimilarity(const PointAttrs& src, const PointAttrs& tgt, double r_max,
                            const RegistrationConfig& cfg = {}) {
  const double i_d = r_max > 0.0 ? (src.vertex - tgt.vertex).norm() / r_max : 0.0;
  const double i_a = 1.0 - std::clamp(src.normal.dot(tgt.normal), -1.0, 1.0);
  const double denom = std::max({std::abs(tgt.curvature.x()), std::abs(tgt.curvature.y()), 1e-6});
  const double dk = std::abs(src.curvature.x() - tgt.curvature.x()) + std::abs(src.curvature.y() - tgt.curvature.y());
  const double i_c = 1.0 - std::exp(-dk / denom);
  return cfg.mu_d * i_d + cfg.mu_a * i_a + cfg.mu_c * i_c;
}

/// w = c (z_ref / z)^2 max(w_floor, min(1, (|k1| + |k2|) / kappa_ref)).
inline double residual_weight(double confidence, const Vec2& curvature, double depth,
                              const RegistrationConfig& cfg = {}) {
  const double kf = std::min(1.0, (std::abs(curvature.x()) + std::abs(curvature.y())) / cfg.kappa_ref);
  const double zr = cfg.z_ref / depth;
  return confidence * zr * zr * std::max(cfg.w_floor, kf);
}

/// Pairs every valid frame vertex (transformed by `pose`) with the most
/// similar predicted pixel in a window around its projection into the
/// prediction's camera, then prunes by distance and normal angle.
inline std::vector<Correspondence> associate(const InputFrame& frame, const PredictedMaps& pred, const Pose& pose,
                                             const RegistrationConfig& cfg = {}) {
  const Intrinsics& k = frame.intrinsics;
  const Pose to_pred = pred.pose.inverse() * pose;
  const Pose world_to_pred = pred.pose.inverse();
  const int half = cfg.window / 2;
  const double cos_max = std::cos(deg2rad(cfg.prune_angle_deg));
  std::vector<Correspondence> out;
  struct Candidate {
    int x, y;
    double dist;
  };
  std::vector<Candidate> cands;
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      if (!frame.vertices.valid(x, y) || !frame.normals.valid(x, y)) continue;
      const Vec3 q = to_pred * frame.vertices(x, y);
      if (q.z() <= 0.0) continue;
      const Vec2 uv = k.project(q);
      if (!k.contains(uv.x(), uv.y())) continue;
      const int cx = int(std::lround(uv.x())), cy = int(std::lround(uv.y()));

      PointAttrs src;
      src.vertex = pose * frame.vertices(x, y);
      src.normal = pose.rotation * frame.normals(x, y);
      if (frame.curvature.valid(x, y)) src.curvature = frame.curvature(x, y);

      cands.clear();
      double r_max = 0.0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          const int xx = cx + dx, yy = cy + dy;
          if (!pred.vertices.valid(xx, yy) || !pred.normals.valid(xx, yy)) continue;
          const double d = (pred.vertices(xx, yy) - src.vertex).norm();
          cands.push_back({xx, yy, d});
          r_max = std::max(r_max, d);
        }
      if (cands.empty()) continue;

      double best = std::numeric_limits<double>::infinity();
      const Candidate* pick = nullptr;
      for (const Candidate& c : cands) {
        PointAttrs tgt;
        tgt.vertex = pred.vertices(c.x, c.y);
        tgt.normal = pred.normals(c.x, c.y);
        if (pred.curvature.valid(c.x, c.y)) tgt.curvature = pred.curvature(c.x, c.y);
        const double g = dissimilarity(src, tgt, r_max, cfg);
        if (g < best) {
          best = g;
          pick = &c;
        }
      }
      if (pick->dist > cfg.prune_distance) continue;
      if (src.normal.dot(pred.normals(pick->x, pick->y)) < cos_max) continue;

      const double z = (world_to_pred * pred.vertices(pick->x, pick->y)).z();
      const double c = pred.confidence.valid(pick->x, pick->y) ? pred.confidence(pick->x, pick->y) : 1.0;
      const Vec2 kap = pred.curvature.valid(pick->x, pick->y) ? pred.curvature(pick->x, pick->y) : Vec2::Zero();
      out.push_back({x, y, pick->x, pick->y, best, residual_weight(c, kap, z, cfg)});
    }
  }
  return out;
}

using Jacobian6 = Eigen::Matrix<double, 1, 6>;

struct Residual {
  double value = 0.0;
  Jacobian6 jacobian = Jacobian6::Zero();
};

/// ((T v - v_t) . n_t) and its derivative w.r.t. a left increment exp(xi) T.
inline Residual geometric_residual(const Pose& pose, const Vec3& v, const Vec3& target, const Vec3& target_normal) {
  const Vec3 p = pose * v;
  Residual r;
  r.value = (p - target).dot(target_normal);
  r.jacobian.head<3>() = target_normal.transpose();
  r.jacobian.tail<3>() = p.cross(target_normal).transpose();
  return r;
}

/// Bilinear sample of a map with value and image-space derivative; nullopt
/// unless all four neighbors are valid.
struct BilinearSample {
  double value;
  Vec2 gradient;
};

inline std::optional<BilinearSample> sample_bilinear(const PixelMap<double>& img, double u, double v) {
  const double fx = std::floor(u), fy = std::floor(v);
  const int x0 = int(fx), y0 = int(fy);
  if (!img.valid(x0, y0) || !img.valid(x0 + 1, y0) || !img.valid(x0, y0 + 1) || !img.valid(x0 + 1, y0 + 1))
    return std::nullopt;
  const double ax = u - fx, ay = v - fy;
  const double i00 = img(x0, y0), i10 = img(x0 + 1, y0), i01 = img(x0, y0 + 1), i11 = img(x0 + 1, y0 + 1);
  BilinearSample s;
  s.value = (1 - ay) * ((1 - ax) * i00 + ax * i10) + ay * ((1 - ax) * i01 + ax * i11);
  s.gradient.x() = (1 - ay) * (i10 - i00) + ay * (i11 - i01);
  s.gradient.y() = (1 - ax) * (i01 - i00) + ax * (i11 - i10);
  return s;
}

/// I_pred(pi(T_pred^-1 T v)) - I(u) and its derivative w.r.t. a left increment.
inline std::optional<Residual> photometric_residual(const Pose& pose, const Vec3& v, double intensity,
                                                    const PredictedMaps& pred, const Intrinsics& k) {
  const Vec3 pw = pose * v;
  const Mat3 rt = pred.pose.rotation.transpose();
  const Vec3 q = rt * (pw - pred.pose.translation);
  if (q.z() <= 0.0) return std::nullopt;
  const Vec2 uv = k.project(q);
  const auto s = sample_bilinear(pred.intensity, uv.x(), uv.y());
  if (!s) return std::nullopt;
  Eigen::Matrix<double, 2, 3> dpi;
  const double iz = 1.0 / q.z();
  dpi << k.fx * iz, 0.0, -k.fx * q.x() * iz * iz, 0.0, k.fy * iz, -k.fy * q.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> dpw;
  dpw.leftCols<3>() = Mat3::Identity();
  dpw.rightCols<3>() = -skew(pw);
  Residual r;
  r.value = s->value - intensity;
  r.jacobian = s->gradient.transpose() * dpi * rt * dpw;
  return r;
}

inline double huber_cost(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? r * r : 2.0 * delta * a - delta * delta;
}

inline double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

struct NormalEquations {
  Mat6 hessian = Mat6::Zero();
  Vec6 gradient = Vec6::Zero();
  double objective = 0.0;
  std::size_t geometric_terms = 0;
  std::size_t photometric_terms = 0;
};

/// Per-correspondence residual values at `pose`; photometric entries are
/// NaN where the projected sample is unavailable.
struct ResidualSet {
  std::vector<double> geometric;
  std::vector<double> photometric;
};

inline ResidualSet evaluate_residuals(const InputFrame& frame, const PredictedMaps& pred,
                                      const std::vector<Correspondence>& psi, const Pose& pose,
                                      const RegistrationConfig& cfg) {
  ResidualSet rs;
  rs.geometric.reserve(psi.size());
  for (const Correspondence& c : psi) {
    const Vec3& v = frame.vertices(c.src_x, c.src_y);
    rs.geometric.push_back((pose * v - pred.vertices(c.tgt_x, c.tgt_y)).dot(pred.normals(c.tgt_x, c.tgt_y)));
    if (!cfg.use_photometric) continue;
    double value = std::numeric_limits<double>::quiet_NaN();
    if (frame.intensity.valid(c.src_x, c.src_y))
      if (const auto r = photometric_residual(pose, v, frame.intensity(c.src_x, c.src_y), pred, frame.intrinsics))
        value = r->value;
    rs.photometric.push_back(value);
  }
  return rs;
}

/// Objective over the terms available in both residual sets, so that two
/// poses are compared on the same photometric support.
inline std::pair<double, double> compare_objectives(const std::vector<Correspondence>& psi, const ResidualSet& a,
                                                    const ResidualSet& b, const RegistrationConfig& cfg) {
  double ea = 0.0, eb = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    ea += cfg.w_geom * psi[i].weight * a.geometric[i] * a.geometric[i];
    eb += cfg.w_geom * psi[i].weight * b.geometric[i] * b.geometric[i];
  }
  for (std::size_t i = 0; i < a.photometric.size(); ++i) {
    if (std::isnan(a.photometric[i]) || std::isnan(b.photometric[i])) continue;
    ea += huber_cost(a.photometric[i], cfg.huber_delta);
    eb += huber_cost(b.photometric[i], cfg.huber_delta);
  }
  return {ea, eb};
}

inline NormalEquations normal_equations(const InputFrame& frame, const PredictedMaps& pred,
                                        const std::vector<Correspondence>& psi, const Pose& pose,
                                        const RegistrationConfig& cfg = {}) {
  NormalEquations ne;
  for (const Correspondence& c : psi) {
    const Vec3& v = frame.vertices(c.src_x, c.src_y);
    const Residual g = geometric_residual(pose, v, pred.vertices(c.tgt_x, c.tgt_y), pred.normals(c.tgt_x, c.tgt_y));
    const double wg = cfg.w_geom * c.weight;
    ne.hessian.noalias() += wg * g.jacobian.transpose() * g.jacobian;
    ne.gradient.noalias() += wg * g.value * g.jacobian.transpose();
    ne.objective += wg * g.value * g.value;
    ++ne.geometric_terms;
    if (!cfg.use_photometric || !frame.intensity.valid(c.src_x, c.src_y)) continue;
    const auto p = photometric_residual(pose, v, frame.intensity(c.src_x, c.src_y), pred, frame.intrinsics);
    if (!p) continue;
    const double wp = huber_weight(p->value, cfg.huber_delta);
    ne.hessian.noalias() += wp * p->jacobian.transpose() * p->jacobian;
    ne.gradient.noalias() += wp * p->value * p->jacobian.transpose();
    ne.objective += huber_cost(p->value, cfg.huber_delta);
    ++ne.photometric_terms;
  }
  return ne;
}

struct IterationLog {
  std::size_t correspondences = 0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  double step_norm = 0.0;
  int backtracks = 0;
};

struct TrackingResult {
  Pose pose;
  bool success = false;
  int iterations = 0;
  std::size_t correspondences = 0;
  double mean_residual = 0.0;  ///< mean |point-to-plane| residual, meters
  bool degenerate = false;
  double condition = 0.0;
  std::vector<Vec6> degenerate_directions;  ///< twist directions (rho, phi) left unconstrained
  std::vector<IterationLog> log;
  std::string failure;
};

/// Eigen-analysis of the 6x6 system: condition number and null directions.
inline void analyze_conditioning(const Mat6& h, double max_condition, TrackingResult& res) {
  const Eigen::SelfAdjointEigenSolver<Mat6> es(h);
  const auto& ev = es.eigenvalues();
  const double top = ev(5);
  res.condition = ev(0) > 0.0 ? top / ev(0) : std::numeric_limits<double>::infinity();
  res.degenerate_directions.clear();
  if (!(top > 0.0)) {
    for (int i = 0; i < 6; ++i) res.degenerate_directions.push_back(Vec6::Unit(i));
    res.degenerate = true;
    return;
  }
  for (int i = 0; i < 6; ++i)
    if (ev(i) * max_condition < top) res.degenerate_directions.push_back(es.eigenvectors().col(i));
  res.degenerate = !res.degenerate_directions.empty();
}

/// Gauss-Newton from `initial`, re-associating every iteration.
inline TrackingResult solve_pose(const InputFrame& frame, const PredictedMaps& pred, const Pose& initial,
                                 const RegistrationConfig& cfg = {}) {
  TrackingResult res;
  res.pose = initial;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const auto psi = associate(frame, pred, res.pose, cfg);
    res.correspondences = psi.size();
    if (psi.size() < cfg.min_correspondences) {
      res.failure = "too few correspondences";
      return res;
    }
    const NormalEquations ne = normal_equations(frame, pred, psi, res.pose, cfg);
    analyze_conditioning(ne.hessian, cfg.max_condition, res);
    if (res.degenerate) {
      res.failure = "degenerate normal equations";
      return res;
    }
    Vec6 step = ne.hessian.ldlt().solve(-ne.gradient);
    IterationLog entry;
    entry.correspondences = psi.size();
    const ResidualSet before = evaluate_residuals(frame, pred, psi, res.pose, cfg);
    Pose next = res.pose;
    bool accepted = false;
    for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
      next = se3_exp(step) * res.pose;
      next = next.normalized();
      const auto [e0, e1] = compare_objectives(psi, before, evaluate_residuals(frame, pred, psi, next, cfg), cfg);
      entry.objective_before = e0;
      entry.objective_after = e1;
      entry.backtracks = bt;
      if (e1 <= e0) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    entry.step_norm = step.norm();
    res.iterations = it + 1;
    if (!accepted) {
      entry.objective_after = entry.objective_before;
      entry.step_norm = 0.0;
      res.log.push_back(entry);
      break;
    }
    res.pose = next;
    res.log.push_back(entry);
    if (entry.step_norm < cfg.update_tolerance) break;
  }

  const auto psi = associate(frame, pred, res.pose, cfg);
  res.correspondences = psi.size();
  if (psi.size() < cfg.min_correspondences) {
    res.failure = "too few correspondences";
    return res;
  }
  double sum = 0.0;
  for (double r : evaluate_residuals(frame, pred, psi, res.pose, RegistrationConfig{cfg}).geometric) sum += std::abs(r);
  res.mean_residual = sum / double(psi.size());
  res.success = true;
  return res;
}

}  // namespace hrbf
