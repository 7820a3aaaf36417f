#include "support.hpp"

#include "hrbf/dataset.hpp"
#include "hrbf/evaluation.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <sstream>

using namespace hrbf;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

DatasetError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DatasetError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no DatasetError thrown";
  return DatasetError::Kind::kIo;
}

}  // namespace

TEST(Associations, ParsesAndSkipsComments) {
  std::istringstream in("# header\n\n1.5 rgb/a.png 1.51 depth/a.png\n2 rgb/b.png 2.0 depth/b.png\n");
  const auto e = parse_associations(in, "assoc.txt");
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].rgb_time, 1.5);
  EXPECT_EQ(e[0].rgb, "rgb/a.png");
  EXPECT_EQ(e[0].depth_time, 1.51);
  EXPECT_EQ(e[1].depth, "depth/b.png");
}

TEST(Associations, MissingRgbPathNamesLine) {
  std::istringstream in("1.0 rgb/a.png 1.0 depth/a.png\n# c\n2.0\n");
  try {
    parse_associations(in, "assoc.txt");
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kMalformedLine);
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("assoc.txt:3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("rgb path"), std::string::npos);
  }
}

TEST(Associations, BadNumberIsMalformed) {
  std::istringstream in("1.0x rgb/a.png 1.0 depth/a.png\n");
  EXPECT_EQ(kind_of([&] { parse_associations(in, "a"); }), DatasetError::Kind::kMalformedLine);
}

TEST(Trajectory, ParseNormalizesQuaternion) {
  std::istringstream in("0.5 1 2 3 0 0 0 2\n");
  const auto t = parse_trajectory(in, "gt");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_TRUE(t[0].pose.rotation.isIdentity(1e-15));
  EXPECT_EQ(t[0].pose.translation, Vec3(1, 2, 3));
  std::istringstream bad("0.5 1 2 3 0 0 0\n");
  EXPECT_EQ(kind_of([&] { parse_trajectory(bad, "gt"); }), DatasetError::Kind::kMalformedLine);
}

TEST(Depth, RawScale) {
  PixelMap<std::uint16_t> raw(1, 1);
  raw.set(0, 0, 5000);
  EXPECT_EQ(depth_from_raw(raw, 5000.0, 0.3, 8.0)(0, 0), 1.0);
}

TEST(Png, DepthAndColorRoundTrip) {
  const auto dir = test::scratch_dir("png");
  PixelMap<std::uint16_t> d(7, 5);
  PixelMap<Color> c(7, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      if ((x + y) % 3) d.set(x, y, std::uint16_t(1000 * x + 37 * y + 60000 * (x == 6)));
      c.set(x, y, Color(x / 6.0, y / 4.0, 0.5));
    }
  write_depth_png((dir / "d.png").string(), d);
  write_color_png((dir / "c.png").string(), c);
  const auto d2 = read_depth_png((dir / "d.png").string());
  const auto c2 = read_color_png((dir / "c.png").string());
  for (std::size_t i = 0; i < d.size(); ++i) {
    ASSERT_EQ(d.valid(i), d2.valid(i));
    if (d.valid(i)) {
      EXPECT_EQ(d[i], d2[i]);
    }
    EXPECT_LT((c[i] - c2[i]).cwiseAbs().maxCoeff(), 0.5 / 255.0 + 1e-12);
  }
}

TEST(Png, EightBitDepthRejected) {
  const auto dir = test::scratch_dir("png8");
  PixelMap<Color> c(4, 4);
  write_color_png((dir / "c.png").string(), c);
  EXPECT_EQ(kind_of([&] { read_depth_png((dir / "c.png").string()); }), DatasetError::Kind::kBadImage);
}

TEST(TumSequence, SyntheticRoundTripBitIdentical) {
  const auto dir = test::scratch_dir("tum_rt");
  const auto seq = desk_orbit(4, 6.0, 2);
  const auto raws = write_tum_sequence(seq, dir, 4);
  const TumSequence tum = TumSequence::open(dir, seq.intrinsics);
  ASSERT_EQ(tum.size(), 4u);
  ASSERT_EQ(tum.ground_truth().size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(test::same_map(read_depth_png((dir / tum.entries()[i].depth).string()), raws[i]));
    const RawFrame f = tum.load(i);
    EXPECT_EQ(f.timestamp, seq.timestamp(i));
    const auto expect = depth_from_raw(raws[i], 5000.0, 0.3, 8.0);
    for (std::size_t p = 0; p < expect.size(); ++p) {
      ASSERT_EQ(f.depth.valid(p), expect.valid(p));
      if (expect.valid(p)) {
        ASSERT_EQ(f.depth[p], expect[p]);
      }
    }
    const Pose g = tum.ground_truth()[i].pose;
    EXPECT_LT((g.translation - seq.ground_truth(i).translation).norm(), 1e-12);
    EXPECT_LT(rotation_distance(g.rotation, seq.ground_truth(i).rotation), 1e-9);
  }
}

TEST(TumSequence, RgbDepthListsAssociated) {
  const auto dir = test::scratch_dir("tum_lists");
  write_tum_sequence(desk_orbit(3), dir, 3);
  fs::remove(dir / "associations.txt");
  write_text(dir / "rgb.txt", "# rgb\n0.001 rgb/000000.png\n0.034 rgb/000001.png\n0.067 rgb/000002.png\n");
  write_text(dir / "depth.txt", "0 depth/000000.png\n0.0333 depth/000001.png\n0.5 depth/000002.png\n");
  const TumSequence tum = TumSequence::open(dir, Intrinsics::kinect(4));
  ASSERT_EQ(tum.size(), 2u);  // third depth frame has no rgb within 20 ms
  EXPECT_EQ(tum.entries()[1].rgb, "rgb/000001.png");
}

TEST(TumSequence, Errors) {
  EXPECT_EQ(kind_of([] { TumSequence::open("/nonexistent/seq", Intrinsics::kinect()); }),
            DatasetError::Kind::kMissingFile);
  const auto dir = test::scratch_dir("tum_err");
  write_tum_sequence(desk_orbit(2), dir, 2);
  // wrong intrinsics size for the 160x120 images
  const TumSequence tum = TumSequence::open(dir, Intrinsics::kinect(2));
  EXPECT_EQ(kind_of([&] { tum.load(0); }), DatasetError::Kind::kDimensionMismatch);
  fs::remove(dir / "depth" / "000001.png");
  const TumSequence ok = TumSequence::open(dir, Intrinsics::kinect(4));
  EXPECT_EQ(kind_of([&] { ok.load(1); }), DatasetError::Kind::kMissingFile);
  write_text(dir / "associations.txt", "0 rgb/000000.png 0\n");
  EXPECT_EQ(kind_of([&] { TumSequence::open(dir, Intrinsics::kinect(4)); }), DatasetError::Kind::kMalformedLine);
}

TEST(Render, PlaneCenterDepthExact) {
  const Intrinsics k{525, 525, 320, 240, 641, 481};
  Scene s;
  s.objects.push_back({PlanePrimitive{Vec3(0, 0, 2), Vec3(0, 0, -1)}, Color::Constant(0.5)});
  const auto r = render_synthetic(s, Pose{}, k);
  EXPECT_EQ(r.depth(320, 240), 2.0);
}

TEST(Render, SphereMatchesQuadraticFormula) {
  const Intrinsics k = Intrinsics::kinect(4);
  const Vec3 c(0.05, -0.02, 2.0);
  const double radius = 0.4;
  const auto r = render_synthetic(sphere_scene(c, radius), Pose{}, k);
  int hits = 0;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const Vec3 d((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const double a = d.squaredNorm(), b = d.dot(c), cc = c.squaredNorm() - radius * radius;
      const double disc = b * b - a * cc;
      if (disc <= 1e-9) {
        if (disc < -1e-9) {
          EXPECT_FALSE(r.depth.valid(x, y));
        }
        continue;
      }
      ASSERT_TRUE(r.depth.valid(x, y));
      EXPECT_NEAR(r.depth(x, y), (b - std::sqrt(disc)) / a, 1e-12);
      ++hits;
    }
  EXPECT_GT(hits, 1000);
}

TEST(Render, NoiseStandardDeviation) {
  const Intrinsics k = Intrinsics::kinect(1);
  const Pose pose = look_at(Vec3(0.2, -0.1, 0), Vec3(0, 0, 2));
  const auto clean = render_synthetic(plane_scene(2.0), pose, k);
  const auto noisy = render_synthetic(plane_scene(2.0), pose, k, 6.0, 99);
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < clean.depth.size(); ++i) {
    if (!clean.depth.valid(i)) continue;
    const double e = noisy.depth[i] - clean.depth[i];
    s += e;
    s2 += e * e;
    ++n;
  }
  ASSERT_GT(n, 100000u);
  const double mean = s / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(sd, 6.0 / 5000.0, 0.1 * 6.0 / 5000.0);
}

TEST(Render, DeterministicForSeed) {
  const auto seq = desk_orbit(3, 12.0, 5);
  const auto a = seq.render(1), b = seq.render(1);
  EXPECT_TRUE(test::same_map(a.depth, b.depth));
  const auto c = desk_orbit(3, 12.0, 6).render(1);
  EXPECT_FALSE(test::same_map(a.depth, c.depth));
}

TEST(Writers, IdentityLine) {
  EXPECT_EQ(format_trajectory({{0.0, Pose{}}}), "0 0 0 0 0 0 0 1\n");
  EXPECT_EQ(format_trajectory({{1.25, Pose{}}}), "1.25 0 0 0 0 0 0 1\n");
}

TEST(Writers, QuaternionsUnitAndRoundTrip) {
  std::mt19937_64 rng(8);
  std::vector<StampedPose> poses;
  for (int i = 0; i < 200; ++i) {
    Vec6 xi;
    for (int j = 0; j < 6; ++j) xi(j) = std::uniform_real_distribution<double>(-3, 3)(rng);
    poses.push_back({0.1 * i, se3_exp(xi)});
  }
  const std::string text = format_trajectory(poses);
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    double v[8];
    for (double& x : v) f >> x;
    EXPECT_NEAR(std::sqrt(v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]), 1.0, 1e-9);
    EXPECT_GE(v[7], 0.0);
  }
  std::istringstream in(text);
  const auto back = parse_trajectory(in, "t");
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_EQ(back[i].timestamp, poses[i].timestamp);
    EXPECT_EQ(back[i].pose.translation, poses[i].pose.translation);
    EXPECT_LT(rotation_distance(back[i].pose.rotation, poses[i].pose.rotation), 1e-12);
  }
}

TEST(Writers, PlyRoundTrip) {
  const auto dir = test::scratch_dir("ply");
  const GlobalModel m = fuse_ground_truth(desk_orbit(3), 2);
  write_pointcloud(dir / "m.ply", m);
  EXPECT_FALSE(fs::exists(dir / "m.ply.tmp"));
  const auto pts = read_ply(dir / "m.ply");
  ASSERT_EQ(pts.size(), m.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Surfel& s = m.surfels()[i];
    EXPECT_EQ(pts[i].position, s.position.cast<float>());
    EXPECT_EQ(pts[i].normal, s.normal.cast<float>());
    EXPECT_EQ(pts[i].confidence, float(s.confidence));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(pts[i].rgb[c] / 255.0, s.color[c], 0.5 / 255.0 + 1e-12);
  }
  // header layout and size
  std::ifstream in(dir / "m.ply", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(bytes.rfind("ply\nformat binary_little_endian 1.0\nelement vertex ", 0), 0u);
  EXPECT_EQ(bytes.size() - (bytes.find("end_header\n") + 11), m.size() * 31);
}

TEST(Writers, ErrorsCarryPath) {
  const std::string bad = "/nonexistent/dir/traj.txt";
  try {
    write_trajectory(bad, {{0.0, Pose{}}});
    FAIL() << "expected OutputError";
  } catch (const OutputError& e) {
    EXPECT_NE(e.path().find("/nonexistent/dir/traj.txt"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir"), std::string::npos);
  }
  const auto dir = test::scratch_dir("ply_bad");
  write_text(dir / "x.ply", "ply\nformat ascii 1.0\nend_header\n");
  EXPECT_THROW(read_ply(dir / "x.ply"), OutputError);
}
