#pragma once

// TUM-style RGB-D sequences: association files, 16-bit depth PNGs, 8-bit
// color PNGs and ground-truth trajectories.

#include "hrbf/frame.hpp"
#include "hrbf/synthetic.hpp"
#include "hrbf/writers.hpp"

#include <png.h>

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrbf {

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { kMissingFile, kMalformedLine, kDimensionMismatch, kBadImage, kIo };

  DatasetError(Kind kind, std::string path, int line, const std::string& what)
      : std::runtime_error(format(path, line, what)), kind_(kind), path_(std::move(path)), line_(line) {}

  Kind kind() const { return kind_; }
  const std::string& path() const { return path_; }
  int line() const { return line_; }  ///< 1-based; 0 when not line-specific

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::kMissingFile: return "missing_file";
      case Kind::kMalformedLine: return "malformed_line";
      case Kind::kDimensionMismatch: return "dimension_mismatch";
      case Kind::kBadImage: return "bad_image";
      case Kind::kIo: return "io";
    }
    return "unknown";
  }

 private:
  static std::string format(const std::string& path, int line, const std::string& what) {
    std::string s = path;
    if (line > 0) s += ":" + std::to_string(line);
    return s + ": " + what;
  }

  Kind kind_;
  std::string path_;
  int line_;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    if (mode[0] == 'r') throw DatasetError(DatasetError::Kind::kMissingFile, path, 0, "cannot open file");
    throw DatasetError(DatasetError::Kind::kIo, path, 0, "cannot open file for writing");
  }
  return f;
}

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* where = static_cast<std::string*>(png_get_error_ptr(png));
  *where = msg;
  png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

/// Decodes a PNG into 8- or 16-bit samples with `channels` per pixel
/// (gray -> 1, otherwise RGB); rows are stored top to bottom.
struct DecodedPng {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

inline DecodedPng decode_png(const std::string& path, bool want_gray) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw DatasetError(DatasetError::Kind::kBadImage, path, 0, "not a PNG file");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError(DatasetError::Kind::kIo, path, 0, "libpng initialization failed");
  }
  DecodedPng out;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError(DatasetError::Kind::kBadImage, path, 0, "PNG decode failed: " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) {
    if (color == PNG_COLOR_TYPE_GRAY) png_set_expand_gray_1_2_4_to_8(png);
    else png_set_packing(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool is_gray = !(color & PNG_COLOR_MASK_COLOR) && color != PNG_COLOR_TYPE_PALETTE;
  if (want_gray && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (!want_gray && is_gray) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // host little-endian samples
  png_read_update_info(png, info);

  out.width = int(png_get_image_width(png, info));
  out.height = int(png_get_image_height(png, info));
  out.channels = int(png_get_channels(png, info));
  out.bit_depth = int(png_get_bit_depth(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.samples.resize(std::size_t(out.width) * out.height * out.channels);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (out.bit_depth == 16) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      out.samples[i] = v;
    } else {
      out.samples[i] = buffer[i];
    }
  }
  return out;
}

inline void encode_png(const std::string& path, int width, int height, int channels, int bit_depth,
                       const std::vector<png_byte>& data) {
  FilePtr f = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError(DatasetError::Kind::kIo, path, 0, "libpng initialization failed");
  }
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError(DatasetError::Kind::kIo, path, 0, "PNG encode failed: " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = std::size_t(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(data.data() + rowbytes * y);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw DatasetError(DatasetError::Kind::kIo, path, 0, "write failed");
}

}  // namespace detail

/// 16-bit single-channel PNG; zero samples are marked invalid.
inline PixelMap<std::uint16_t> read_depth_png(const std::string& path) {
  const detail::DecodedPng img = detail::decode_png(path, true);
  if (img.bit_depth != 16) throw DatasetError(DatasetError::Kind::kBadImage, path, 0, "depth PNG must be 16-bit");
  PixelMap<std::uint16_t> out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (img.samples[i] != 0) out.set(i, img.samples[i]);
  return out;
}

inline void write_depth_png(const std::string& path, const PixelMap<std::uint16_t>& depth) {
  std::vector<png_byte> data(depth.size() * 2);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const std::uint16_t v = depth.valid(i) ? depth[i] : 0;
    data[2 * i] = png_byte(v >> 8);  // PNG is big-endian
    data[2 * i + 1] = png_byte(v & 0xff);
  }
  detail::encode_png(path, depth.width(), depth.height(), 1, 16, data);
}

/// Color PNG as linear [0, 1] RGB.
inline PixelMap<Color> read_color_png(const std::string& path) {
  const detail::DecodedPng img = detail::decode_png(path, false);
  const double scale = img.bit_depth == 16 ? 65535.0 : 255.0;
  PixelMap<Color> out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.set(i, Color(img.samples[3 * i], img.samples[3 * i + 1], img.samples[3 * i + 2]) / scale);
  return out;
}

inline void write_color_png(const std::string& path, const PixelMap<Color>& color) {
  std::vector<png_byte> data(color.size() * 3, 0);
  for (std::size_t i = 0; i < color.size(); ++i) {
    if (!color.valid(i)) continue;
    for (int c = 0; c < 3; ++c) data[3 * i + c] = png_byte(std::lround(std::clamp(color[i][c], 0.0, 1.0) * 255.0));
  }
  detail::encode_png(path, color.width(), color.height(), 3, 8, data);
}

/// Meters to raw units (rounded), 0 for invalid or out-of-range values.
inline PixelMap<std::uint16_t> depth_to_raw(const PixelMap<double>& depth, double depth_scale) {
  PixelMap<std::uint16_t> out(depth.width(), depth.height());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!depth.valid(i)) continue;
    const double v = std::round(depth[i] * depth_scale);
    if (v >= 1.0 && v <= 65535.0) out.set(i, std::uint16_t(v));
  }
  return out;
}

struct AssociationEntry {
  double rgb_time = 0.0;
  std::string rgb;
  double depth_time = 0.0;
  std::string depth;
};

namespace detail {

inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline bool skip_line(const std::string& line) {
  const auto p = line.find_first_not_of(" \t\r");
  return p == std::string::npos || line[p] == '#';
}

inline double parse_double(const std::string& tok, const std::string& path, int line, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
    throw DatasetError(DatasetError::Kind::kMalformedLine, path, line, std::string("bad ") + what + " '" + tok + "'");
  return v;
}

}  // namespace detail

/// Lines "rgb_time rgb_path depth_time depth_path"; '#' comments allowed.
inline std::vector<AssociationEntry> parse_associations(std::istream& in, const std::string& source) {
  std::vector<AssociationEntry> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (detail::skip_line(line)) continue;
    const auto tok = detail::tokenize(line);
    if (tok.size() < 4) {
      const char* missing = tok.size() < 2 ? "rgb path" : tok.size() < 3 ? "depth timestamp" : "depth path";
      throw DatasetError(DatasetError::Kind::kMalformedLine, source, no, std::string("missing ") + missing);
    }
    if (tok.size() > 4) throw DatasetError(DatasetError::Kind::kMalformedLine, source, no, "trailing fields");
    AssociationEntry e;
    e.rgb_time = detail::parse_double(tok[0], source, no, "rgb timestamp");
    e.rgb = tok[1];
    e.depth_time = detail::parse_double(tok[2], source, no, "depth timestamp");
    e.depth = tok[3];
    out.push_back(std::move(e));
  }
  return out;
}

/// Lines "t tx ty tz qx qy qz qw".
inline std::vector<StampedPose> parse_trajectory(std::istream& in, const std::string& source) {
  std::vector<StampedPose> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (detail::skip_line(line)) continue;
    const auto tok = detail::tokenize(line);
    if (tok.size() != 8) throw DatasetError(DatasetError::Kind::kMalformedLine, source, no, "expected 8 fields");
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = detail::parse_double(tok[i], source, no, "number");
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (q.norm() < 1e-9) throw DatasetError(DatasetError::Kind::kMalformedLine, source, no, "zero quaternion");
    q.normalize();
    out.push_back({v[0], Pose{q.toRotationMatrix(), Vec3(v[1], v[2], v[3])}});
  }
  return out;
}

inline std::vector<StampedPose> read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(DatasetError::Kind::kMissingFile, path, 0, "cannot open file");
  return parse_trajectory(in, path);
}

/// Pairs lines of TUM rgb.txt / depth.txt ("time path") by nearest timestamp.
inline std::vector<AssociationEntry> associate_lists(const std::string& rgb_list, const std::string& depth_list,
                                                     double max_dt = 0.02) {
  auto read_list = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError(DatasetError::Kind::kMissingFile, path, 0, "cannot open file");
    std::vector<std::pair<double, std::string>> out;
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (detail::skip_line(line)) continue;
      const auto tok = detail::tokenize(line);
      if (tok.size() != 2) throw DatasetError(DatasetError::Kind::kMalformedLine, path, no, "expected 2 fields");
      out.emplace_back(detail::parse_double(tok[0], path, no, "timestamp"), tok[1]);
    }
    return out;
  };
  const auto rgb = read_list(rgb_list);
  const auto depth = read_list(depth_list);
  std::vector<AssociationEntry> out;
  std::size_t j = 0;
  for (const auto& [t, d] : depth) {
    while (j + 1 < rgb.size() && std::abs(rgb[j + 1].first - t) <= std::abs(rgb[j].first - t)) ++j;
    if (j < rgb.size() && std::abs(rgb[j].first - t) <= max_dt) out.push_back({rgb[j].first, rgb[j].second, t, d});
  }
  return out;
}

struct RawFrame {
  double timestamp = 0.0;
  PixelMap<double> depth;  ///< meters
  PixelMap<Color> color;
};

class TumSequence {
 public:
  /// `association` may be empty, in which case root/associations.txt or
  /// rgb.txt + depth.txt are used.
  static TumSequence open(const std::filesystem::path& root, const Intrinsics& k, std::string association = {},
                          double min_depth = 0.3, double max_depth = 8.0) {
    k.validate();
    TumSequence s;
    s.root_ = root;
    s.intrinsics_ = k;
    s.min_depth_ = min_depth;
    s.max_depth_ = max_depth;
    if (!std::filesystem::is_directory(root))
      throw DatasetError(DatasetError::Kind::kMissingFile, root.string(), 0, "sequence directory not found");
    std::filesystem::path assoc = association.empty() ? root / "associations.txt" : std::filesystem::path(association);
    if (assoc.is_relative() && !association.empty() && !std::filesystem::exists(assoc)) assoc = root / assoc;
    if (std::filesystem::exists(assoc)) {
      std::ifstream in(assoc);
      if (!in) throw DatasetError(DatasetError::Kind::kMissingFile, assoc.string(), 0, "cannot open file");
      s.entries_ = parse_associations(in, assoc.string());
    } else if (!association.empty()) {
      throw DatasetError(DatasetError::Kind::kMissingFile, assoc.string(), 0, "association file not found");
    } else {
      s.entries_ = associate_lists((root / "rgb.txt").string(), (root / "depth.txt").string());
    }
    std::stable_sort(s.entries_.begin(), s.entries_.end(),
                     [](const AssociationEntry& a, const AssociationEntry& b) { return a.depth_time < b.depth_time; });
    const auto gt = root / "groundtruth.txt";
    if (std::filesystem::exists(gt)) s.ground_truth_ = read_trajectory(gt.string());
    return s;
  }

  std::size_t size() const { return entries_.size(); }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<StampedPose>& ground_truth() const { return ground_truth_; }
  const std::vector<AssociationEntry>& entries() const { return entries_; }

  RawFrame load(std::size_t i) const {
    const AssociationEntry& e = entries_.at(i);
    const std::string dpath = (root_ / e.depth).string();
    const std::string cpath = (root_ / e.rgb).string();
    const PixelMap<std::uint16_t> raw = read_depth_png(dpath);
    if (!raw.same_shape(intrinsics_.width, intrinsics_.height))
      throw DatasetError(DatasetError::Kind::kDimensionMismatch, dpath, 0,
                         "depth image " + std::to_string(raw.width()) + "x" + std::to_string(raw.height()) +
                             " does not match intrinsics " + std::to_string(intrinsics_.width) + "x" +
                             std::to_string(intrinsics_.height));
    RawFrame f;
    f.timestamp = e.depth_time;
    f.depth = depth_from_raw(raw, intrinsics_.depth_scale, min_depth_, max_depth_);
    f.color = read_color_png(cpath);
    if (!f.color.same_shape(raw))
      throw DatasetError(DatasetError::Kind::kDimensionMismatch, cpath, 0, "color and depth sizes differ");
    return f;
  }

 private:
  std::filesystem::path root_;
  Intrinsics intrinsics_;
  double min_depth_ = 0.3, max_depth_ = 8.0;
  std::vector<AssociationEntry> entries_;
  std::vector<StampedPose> ground_truth_;
};

/// Writes the first `frames` frames of a synthetic sequence in TUM layout
/// (depth/, rgb/, associations.txt, groundtruth.txt). Returns the raw depth
/// images that were written.
inline std::vector<PixelMap<std::uint16_t>> write_tum_sequence(const SyntheticSequence& seq,
                                                               const std::filesystem::path& dir, std::size_t frames) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "depth", ec);
  fs::create_directories(dir / "rgb", ec);
  if (ec) throw DatasetError(DatasetError::Kind::kIo, dir.string(), 0, "cannot create directories");
  std::vector<PixelMap<std::uint16_t>> raws;
  std::vector<StampedPose> gt;
  std::string assoc;
  for (std::size_t i = 0; i < std::min(frames, seq.size()); ++i) {
    const RenderedFrame r = seq.render(i);
    const std::string t = format_number(seq.timestamp(i));
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    raws.push_back(depth_to_raw(r.depth, seq.intrinsics.depth_scale));
    write_depth_png((dir / "depth" / name).string(), raws.back());
    write_color_png((dir / "rgb" / name).string(), r.color);
    assoc += t + " rgb/" + name + " " + t + " depth/" + name + "\n";
    gt.push_back({seq.timestamp(i), seq.ground_truth(i)});
  }
  write_file_atomic(dir / "associations.txt", assoc);
  write_trajectory(dir / "groundtruth.txt", gt);
  return raws;
}

}  // namespace hrbf
