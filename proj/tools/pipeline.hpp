#pragma once

// Run configuration and the end-to-end driver behind hrbf_track.

#include "hrbf/dataset.hpp"
#include "hrbf/evaluation.hpp"
#include "hrbf/writers.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace hrbf::app {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string input = "desk";  ///< synthetic scene name, or TUM sequence directory
  std::string format = "synthetic";
  std::string association;
  int max_frames = 0;  ///< 0: whole sequence
  int downsample = 1;  ///< integer image reduction for TUM input
  double noise_sigma = 0.0;
  std::string noise_units = "depth_units";  ///< or "mm"
  std::uint64_t seed = 0;
  std::string predictor = "hrbf";
  double clip = 0.05;

  // Camera (TUM input). Synthetic scenes render a Kinect-class camera at
  // 640 / synthetic_factor.
  double fx = 525.0, fy = 525.0, cx = 319.5, cy = 239.5;
  int width = 640, height = 480;
  double depth_scale = 5000.0;
  int synthetic_factor = 4;
  int synthetic_frames = 100;  ///< length of the orbit the sweep is spread over

  TrackerOptions tracker;

  std::string output_traj;
  std::string output_ply;
  std::string report;
  std::string metadata;  ///< default: <report>.meta.json
  std::string failure_record;  ///< default: <report>.failure.json
};

namespace detail {

using Slot = std::variant<double*, int*, bool*, std::string*, std::uint64_t*>;

inline std::map<std::string, Slot> config_slots(RunConfig& c) {
  TrackerOptions& t = c.tracker;
  PreprocessOptions& p = t.preprocess;
  RegistrationConfig& r = t.registration;
  FusionOptions& f = t.fusion;
  return {
      {"input", &c.input},
      {"format", &c.format},
      {"association", &c.association},
      {"max_frames", &c.max_frames},
      {"downsample", &c.downsample},
      {"noise_sigma", &c.noise_sigma},
      {"noise_units", &c.noise_units},
      {"seed", &c.seed},
      {"predictor", &c.predictor},
      {"clip", &c.clip},
      {"fx", &c.fx},
      {"fy", &c.fy},
      {"cx", &c.cx},
      {"cy", &c.cy},
      {"width", &c.width},
      {"height", &c.height},
      {"depth_scale", &c.depth_scale},
      {"synthetic_factor", &c.synthetic_factor},
      {"synthetic_frames", &c.synthetic_frames},
      {"output_traj", &c.output_traj},
      {"output_ply", &c.output_ply},
      {"report", &c.report},
      {"metadata", &c.metadata},
      {"failure_record", &c.failure_record},
      // preprocessing / prediction
      {"min_depth", &p.min_depth},
      {"max_depth", &p.max_depth},
      {"bilateral_sigma_s", &p.bilateral_sigma_s},
      {"bilateral_sigma_r", &p.bilateral_sigma_r},
      {"bilateral_radius", &p.bilateral_radius},
      {"support_neighbors", &p.support_neighbors},
      {"window", &p.support_window},  // k-NN search patch for support radii
      {"support_min", &p.support_min},
      {"support_max", &p.support_max},
      {"epsilon", &p.epsilon},
      {"radial_sigma", &p.radial_sigma},
      {"eta", &p.prediction.raycast.eta},
      {"raycast_tolerance", &p.prediction.raycast.tolerance},
      {"raycast_max_iterations", &p.prediction.raycast.max_iterations},
      {"hessian_core", &p.prediction.hessian_core},
      // registration
      {"association_window", &r.window},
      {"mu_d", &r.mu_d},
      {"mu_a", &r.mu_a},
      {"mu_c", &r.mu_c},
      {"w_geom", &r.w_geom},
      {"max_iterations", &r.max_iterations},
      {"prune_distance", &r.prune_distance},
      {"prune_angle_deg", &r.prune_angle_deg},
      {"huber_delta", &r.huber_delta},
      {"use_photometric", &r.use_photometric},
      {"update_tolerance", &r.update_tolerance},
      {"max_condition", &r.max_condition},
      {"min_correspondences", &r.min_correspondences},
      // fusion
      {"merge_distance", &f.merge_distance},
      {"merge_angle_deg", &f.merge_angle_deg},
      {"stable_confidence", &f.stable_confidence},
      {"unstable_window", &f.unstable_window},
      {"warmup_rate", &f.warmup_rate},
  };
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value for '" + key + "': '" + v + "'");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Sets one key; unknown keys and malformed values throw ConfigError.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  auto slots = detail::config_slots(c);
  const auto it = slots.find(key);
  if (it == slots.end()) throw ConfigError("unknown configuration key '" + key + "'");
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          *p = value;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1")
            *p = true;
          else if (value == "false" || value == "0")
            *p = false;
          else
            throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected true/false)");
        } else {
          *p = detail::parse_number<T>(key, value);
        }
      },
      it->second);
}

/// "key = value" lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::istream& in,
                                                                          const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(no) + ": empty key");
    out.emplace_back(key, detail::trim(line.substr(eq + 1)));
  }
  return out;
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.format != "synthetic" && c.format != "tum") fail("format must be 'tum' or 'synthetic'");
  if (c.format == "synthetic" && c.input != "desk") fail("unknown synthetic scene '" + c.input + "' (available: desk)");
  if (c.format == "tum" && c.input.empty()) fail("--input is required for tum sequences");
  if (c.predictor != "hrbf" && c.predictor != "splat") fail("predictor must be 'hrbf' or 'splat'");
  if (c.noise_units != "depth_units" && c.noise_units != "mm") fail("noise_units must be 'depth_units' or 'mm'");
  const int w = c.tracker.preprocess.support_window;
  if (w != 5 && w != 7 && w != 9) fail("window must be 5, 7 or 9");
  const int aw = c.tracker.registration.window;
  if (aw < 1 || aw % 2 == 0) fail("association_window must be odd and >= 1");
  if (c.max_frames < 0) fail("max_frames must be >= 0");
  if (c.synthetic_frames < 1) fail("synthetic_frames must be >= 1");
  if (c.downsample < 1 || c.synthetic_factor < 1) fail("downsample factors must be >= 1");
  if (!(c.noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(c.clip > 0.0)) fail("clip must be > 0");
  if (c.width % c.downsample || c.height % c.downsample) fail("image size must be divisible by downsample");
  const RegistrationConfig& r = c.tracker.registration;
  if (r.max_iterations < 1) fail("max_iterations must be >= 1");
  if (!(r.mu_d >= 0 && r.mu_a >= 0 && r.mu_c >= 0) || !(r.mu_d + r.mu_a + r.mu_c > 0)) fail("mu weights must be >= 0");
  if (!(r.w_geom > 0.0)) fail("w_geom must be > 0");
  const PreprocessOptions& p = c.tracker.preprocess;
  if (!(p.min_depth > 0.0 && p.max_depth > p.min_depth)) fail("need 0 < min_depth < max_depth");
  if (!(p.epsilon > 0.0 && p.radial_sigma > 0.0 && p.prediction.raycast.eta > 0.0))
    fail("eta, epsilon and radial_sigma must be > 0");
  const FusionOptions& f = c.tracker.fusion;
  if (!(f.merge_distance > 0.0 && f.merge_angle_deg > 0.0 && f.merge_angle_deg < 90.0))
    fail("merge thresholds out of range");
  if (f.unstable_window < 0) fail("unstable_window must be >= 0");
  Intrinsics k{c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.depth_scale};
  try {
    k.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

/// Canonical "key=value" listing of every setting, sorted by key.
inline std::string canonical_config(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& [key, slot] : detail::config_slots(copy)) {
    out += key + "=";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>)
            out += *p;
          else if constexpr (std::is_same_v<T, bool>)
            out += *p ? "true" : "false";
          else if constexpr (std::is_floating_point_v<T>)
            out += format_number(*p);
          else
            out += std::to_string(*p);
        },
        slot);
    out += '\n';
  }
  return out;
}

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Defaults, then the config file, then explicit overrides (flags).
inline RunConfig resolve_config(const std::string& config_file,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig c;
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot open config file '" + config_file + "'");
    for (const auto& [k, v] : parse_config_text(in, config_file)) set_config_value(c, k, v);
  }
  for (const auto& [k, v] : overrides) set_config_value(c, k, v);
  validate(c);
  c.tracker.predictor = c.predictor == "splat" ? Predictor::kSplat : Predictor::kHrbf;
  return c;
}

/// Block reduction: per block the lower median of valid depths, mean color.
inline RawFrame downsample_frame(const RawFrame& f, int factor) {
  if (factor == 1) return f;
  const int w = f.depth.width() / factor, h = f.depth.height() / factor;
  RawFrame out{f.timestamp, PixelMap<double>(w, h), PixelMap<Color>(w, h)};
  std::vector<double> block;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      block.clear();
      Color sum = Color::Zero();
      int nc = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const int xx = x * factor + dx, yy = y * factor + dy;
          if (f.depth.valid(xx, yy)) block.push_back(f.depth(xx, yy));
          if (f.color.valid(xx, yy)) {
            sum += f.color(xx, yy);
            ++nc;
          }
        }
      if (!block.empty()) {
        const auto mid = block.begin() + (block.size() - 1) / 2;
        std::nth_element(block.begin(), mid, block.end());
        out.depth.set(x, y, *mid);
      }
      if (nc) out.color.set(x, y, sum / nc);
    }
  return out;
}

struct RunResult {
  int exit_code = 0;
  std::size_t frames_total = 0;
  std::size_t frames_lost = 0;
  std::optional<double> ate_rmse;
  std::optional<double> rms_pred;
  std::vector<StampedPose> trajectory;
  std::size_t model_size = 0;
  std::string failure;  ///< empty on success
};

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : "nan"; }

inline std::string report_csv(const RunConfig& c, const RunResult& r) {
  return "sigma,method,rms_pred_m,ate_rmse_m,frames_lost,frames_total\n" + format_number(c.noise_sigma) + "," +
         c.predictor + "," + format_optional(r.rms_pred) + "," + format_optional(r.ate_rmse) + "," +
         std::to_string(r.frames_lost) + "," + std::to_string(r.frames_total) + "\n";
}

inline std::string with_suffix(const std::string& base, const std::string& suffix) {
  return base.empty() ? std::string() : base + suffix;
}

inline void emit_failure(const RunConfig& c, const std::string& kind, const std::string& message,
                         const nlohmann::json& extra, std::ostream& err) {
  nlohmann::json j = {{"status", "failed"}, {"kind", kind}, {"message", message}, {"seed", c.seed},
                      {"config_hash", config_hash(c)}};
  j.update(extra);
  err << j.dump() << "\n";
  const std::string path = c.failure_record.empty() ? with_suffix(c.report, ".failure.json") : c.failure_record;
  if (!path.empty()) {
    try {
      write_file_atomic(path, j.dump(2) + "\n");
    } catch (const OutputError& e) {
      err << "cannot write failure record: " << e.what() << "\n";
    }
  }
}

/// Runs the configured sequence end to end. Never throws for dataset or
/// output errors; those end in a failure record and a nonzero exit code.
inline RunResult run(const RunConfig& c, std::ostream& log = std::cerr) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  RunResult res;
  double load_s = 0.0, pre_s = 0.0, pred_s = 0.0, reg_s = 0.0, fuse_s = 0.0;
  Tracker tracker(c.tracker);
  std::vector<StampedPose> gt;
  std::optional<SyntheticSequence> synth;
  try {
    std::function<RawFrame(std::size_t)> frame_at;
    Intrinsics k;
    std::size_t n = 0;
    std::optional<TumSequence> tum;
    if (c.format == "synthetic") {
      const double sigma = c.noise_units == "mm" ? c.noise_sigma * c.depth_scale / 1000.0 : c.noise_sigma;
      synth = desk_orbit(c.synthetic_frames, sigma, c.seed, Intrinsics::kinect(c.synthetic_factor));
      k = synth->intrinsics;
      n = synth->size();
      if (c.max_frames > 0) n = std::min<std::size_t>(n, std::size_t(c.max_frames));
      frame_at = [&](std::size_t i) {
        RenderedFrame r = synth->render(i);
        return RawFrame{synth->timestamp(i), std::move(r.depth), std::move(r.color)};
      };
    } else {
      const Intrinsics full{c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.depth_scale};
      tum = TumSequence::open(c.input, full, c.association, c.tracker.preprocess.min_depth,
                              c.tracker.preprocess.max_depth);
      k = c.downsample > 1 ? full.scaled(c.downsample) : full;
      n = tum->size();
      if (c.max_frames > 0) n = std::min<std::size_t>(n, std::size_t(c.max_frames));
      frame_at = [&](std::size_t i) { return downsample_frame(tum->load(i), c.downsample); };
      gt = tum->ground_truth();
    }
    if (n == 0) throw DatasetError(DatasetError::Kind::kMissingFile, c.input, 0, "sequence has no frames");

    for (std::size_t i = 0; i < n; ++i) {
      const auto t0 = clock::now();
      const RawFrame f = frame_at(i);
      load_s += std::chrono::duration<double>(clock::now() - t0).count();
      const FrameReport& rep = tracker.process(f.depth, f.color, k, f.timestamp);
      pre_s += rep.preprocess_s;
      pred_s += rep.predict_s;
      reg_s += rep.register_s;
      fuse_s += rep.fuse_s;
      bool lost = !rep.tracked;
      if (synth) {
        gt.push_back({synth->timestamp(i), synth->ground_truth(i)});
        if (rep.tracked && (rep.pose.translation - synth->ground_truth(i).translation).norm() > c.clip) lost = true;
      }
      if (lost) ++res.frames_lost;
      log << "frame " << i << (rep.tracked ? " tracked" : " lost") << " iterations=" << rep.iterations
          << " correspondences=" << rep.correspondences << (rep.failure.empty() ? "" : " (" + rep.failure + ")")
          << "\n";
    }
    res.frames_total = n;
  } catch (const DatasetError& e) {
    res.exit_code = 3;
    res.failure = e.what();
    emit_failure(c, "dataset", e.what(), {{"error", DatasetError::kind_name(e.kind())}, {"path", e.path()}, {"line", e.line()}}, log);
    return res;
  }

  res.trajectory = tracker.trajectory();
  res.model_size = tracker.model().size();
  if (!gt.empty()) {
    try {
      res.ate_rmse = ate_rmse(res.trajectory, gt).rmse;
    } catch (const std::invalid_argument&) {
    }
  }
  if (synth && !tracker.model().empty() && !res.trajectory.empty()) {
    const PredictedMaps pred = predict(c.tracker.predictor, tracker.model(), res.trajectory.back().pose,
                                       synth->intrinsics, c.tracker.preprocess.prediction);
    if (pred.count_valid() > 0) res.rms_pred = surface_error(pred.vertices, synth->scene, synth->origin()).rms;
  }

  const auto t_write = clock::now();
  try {
    if (!c.output_traj.empty()) write_trajectory(c.output_traj, res.trajectory);
    if (!c.output_ply.empty()) write_pointcloud(c.output_ply, tracker.model());
    if (!c.report.empty()) write_file_atomic(c.report, report_csv(c, res));
  } catch (const OutputError& e) {
    res.exit_code = 4;
    res.failure = e.what();
    emit_failure(c, "output", e.what(), {{"path", e.path()}}, log);
    return res;
  }
  const double write_s = std::chrono::duration<double>(clock::now() - t_write).count();

  const bool too_many_lost = 2 * res.frames_lost > res.frames_total;
  const std::string meta_path = c.metadata.empty() ? with_suffix(c.report, ".meta.json") : c.metadata;
  if (!meta_path.empty()) {
    nlohmann::json meta = {
        {"seed", c.seed},
        {"config_hash", config_hash(c)},
        {"config", canonical_config(c)},
        {"frames_total", res.frames_total},
        {"frames_lost", res.frames_lost},
        {"model_size", res.model_size},
        {"timings_s",
         {{"load", load_s},
          {"preprocess", pre_s},
          {"predict", pred_s},
          {"register", reg_s},
          {"fuse", fuse_s},
          {"write", write_s},
          {"total", std::chrono::duration<double>(clock::now() - t_start).count()}}}};
    if (res.ate_rmse) meta["ate_rmse_m"] = *res.ate_rmse;
    if (res.rms_pred) meta["rms_pred_m"] = *res.rms_pred;
    try {
      write_file_atomic(meta_path, meta.dump(2) + "\n");
    } catch (const OutputError& e) {
      log << "cannot write metadata: " << e.what() << "\n";
    }
  }

  if (too_many_lost) {
    res.exit_code = 2;
    res.failure = "tracking lost on " + std::to_string(res.frames_lost) + " of " + std::to_string(res.frames_total) +
                  " frames";
    emit_failure(c, "tracking", res.failure, {{"frames_lost", res.frames_lost}, {"frames_total", res.frames_total}},
                 log);
  }
  return res;
}

}  // namespace hrbf::app
