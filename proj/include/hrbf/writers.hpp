#pragma once

// Trajectory text files, binary PLY point clouds and atomic file output.

#include "hrbf/fusion.hpp"
#include "hrbf/tracker.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrbf {

class OutputError : public std::runtime_error {
 public:
  OutputError(const std::string& path, const std::string& what) : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Shortest decimal representation that round-trips; -0 prints as 0.
inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ec == std::errc() ? ptr : buf);
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw OutputError(tmp.string(), "cannot open for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw OutputError(tmp.string(), "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw OutputError(path.string(), "cannot move temporary file into place");
  }
}

/// Unit quaternion (x, y, z, w) with w >= 0.
inline Eigen::Vector4d pose_quaternion(const Pose& p) {
  Eigen::Quaterniond q(p.rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return {q.x(), q.y(), q.z(), q.w()};
}

/// One "t tx ty tz qx qy qz qw" line per pose.
inline std::string format_trajectory(const std::vector<StampedPose>& poses) {
  std::string s;
  for (const StampedPose& sp : poses) {
    const Eigen::Vector4d q = pose_quaternion(sp.pose);
    const double v[8] = {sp.timestamp, sp.pose.translation.x(), sp.pose.translation.y(), sp.pose.translation.z(),
                         q[0], q[1], q[2], q[3]};
    for (int i = 0; i < 8; ++i) {
      if (i) s += ' ';
      s += format_number(v[i]);
    }
    s += '\n';
  }
  return s;
}

inline void write_trajectory(const std::filesystem::path& path, const std::vector<StampedPose>& poses) {
  write_file_atomic(path, format_trajectory(poses));
}

struct PlyPoint {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  Eigen::Vector3f normal = Eigen::Vector3f::UnitZ();
  std::array<std::uint8_t, 3> rgb{0, 0, 0};
  float confidence = 0.0f;
};

inline constexpr const char* kPlyProperties[] = {"float x",         "float y",          "float z",
                                                 "float nx",        "float ny",         "float nz",
                                                 "uchar red",       "uchar green",      "uchar blue",
                                                 "float confidence"};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T get_le(const char* p) {
  char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string format_ply(const std::vector<PlyPoint>& points) {
  std::string s = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(points.size()) + "\n";
  for (const char* p : kPlyProperties) s += std::string("property ") + p + "\n";
  s += "end_header\n";
  for (const PlyPoint& p : points) {
    for (int i = 0; i < 3; ++i) detail::put_le(s, p.position[i]);
    for (int i = 0; i < 3; ++i) detail::put_le(s, p.normal[i]);
    for (int i = 0; i < 3; ++i) detail::put_le(s, p.rgb[i]);
    detail::put_le(s, p.confidence);
  }
  return s;
}

inline std::vector<PlyPoint> ply_points(const GlobalModel& model) {
  std::vector<PlyPoint> out;
  out.reserve(model.size());
  for (const Surfel& s : model.surfels()) {
    PlyPoint p;
    p.position = s.position.cast<float>();
    p.normal = s.normal.cast<float>();
    for (int i = 0; i < 3; ++i) p.rgb[i] = std::uint8_t(std::lround(std::clamp(s.color[i], 0.0, 1.0) * 255.0));
    p.confidence = float(s.confidence);
    out.push_back(p);
  }
  return out;
}

inline void write_pointcloud(const std::filesystem::path& path, const GlobalModel& model) {
  write_file_atomic(path, format_ply(ply_points(model)));
}

/// Reads files produced by write_pointcloud (exact header layout).
inline std::vector<PlyPoint> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw OutputError(path.string(), "cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string end_marker = "end_header\n";
  const auto end = bytes.find(end_marker);
  if (end == std::string::npos) throw OutputError(path.string(), "missing end_header");
  std::istringstream header(bytes.substr(0, end));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(header, line)) lines.push_back(line);
  const std::size_t nprops = std::size(kPlyProperties);
  if (lines.size() != 3 + nprops || lines[0] != "ply" || lines[1] != "format binary_little_endian 1.0" ||
      lines[2].rfind("element vertex ", 0) != 0)
    throw OutputError(path.string(), "unsupported PLY header");
  for (std::size_t i = 0; i < nprops; ++i)
    if (lines[3 + i] != std::string("property ") + kPlyProperties[i])
      throw OutputError(path.string(), "unexpected property '" + lines[3 + i] + "'");
  std::size_t count = 0;
  {
    const std::string n = lines[2].substr(15);
    const auto [ptr, ec] = std::from_chars(n.data(), n.data() + n.size(), count);
    if (ec != std::errc() || ptr != n.data() + n.size()) throw OutputError(path.string(), "bad vertex count");
  }
  constexpr std::size_t kStride = 6 * 4 + 3 + 4;
  const std::size_t body = end + end_marker.size();
  if (bytes.size() - body != count * kStride) throw OutputError(path.string(), "truncated vertex data");
  std::vector<PlyPoint> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = bytes.data() + body + i * kStride;
    for (int k = 0; k < 3; ++k) out[i].position[k] = detail::get_le<float>(p + 4 * k);
    for (int k = 0; k < 3; ++k) out[i].normal[k] = detail::get_le<float>(p + 12 + 4 * k);
    for (int k = 0; k < 3; ++k) out[i].rgb[k] = std::uint8_t(p[24 + k]);
    out[i].confidence = detail::get_le<float>(p + 27);
  }
  return out;
}

}  // namespace hrbf
