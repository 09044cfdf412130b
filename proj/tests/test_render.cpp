#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "lumenpose/airway.hpp"
#include "lumenpose/render.hpp"

using namespace lumenpose;

namespace {

AirwayTree straight_tube(double length = 96.0, double radius = 6.0) {
  AirwayTree t;
  t.spec.scale = length;
  Branch b;
  b.id = 0;
  b.parent_id = -1;
  b.start = {0, 0, 0};
  b.end = {length, 0, 0};
  b.start_radius = radius;
  b.end_radius = radius;
  b.level = 0;
  t.branches.push_back(b);
  return t;
}

// Camera at (s, 0, 0) looking down +x with up = +z.
Pose axis_camera(double s) {
  Mat3 r = Mat3::from_columns({1, 0, 0}, {0, 1, 0}, {0, 0, 1});
  return Pose{{s, 0, 0}, rotation_to_euler(r)};
}

double mean_abs_diff_in_disk(const Frame& a, const Frame& b, double radius_px) {
  const double cx = (a.width - 1) / 2.0, cy = (a.height - 1) / 2.0;
  double acc = 0.0;
  int n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > radius_px * radius_px) continue;
      acc += std::abs(static_cast<double>(a.gray(x, y)) - static_cast<double>(b.gray(x, y)));
      n++;
    }
  return acc / (255.0 * n);
}

// Bilinear sample of the gray channel in (sx, sy) coordinates where
// sx in [-1, 1] maps left->right and sy in [-1, 1] maps bottom->top.
double sample_gray(const Frame& f, double sx, double sy) {
  const double fx = (sx + 1.0) * f.width / 2.0 - 0.5;
  const double fy = (1.0 - sy) * f.height / 2.0 - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double wx = fx - x0, wy = fy - y0;
  auto px = [&](int x, int y) {
    x = std::clamp(x, 0, f.width - 1);
    y = std::clamp(y, 0, f.height - 1);
    return static_cast<double>(f.gray(x, y));
  };
  return px(x0, y0) * (1 - wx) * (1 - wy) + px(x0 + 1, y0) * wx * (1 - wy) +
         px(x0, y0 + 1) * (1 - wx) * wy + px(x0 + 1, y0 + 1) * wx * wy;
}

}  // namespace

TEST_CASE("render is deterministic") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  Frame a = render(t, axis_camera(20.0), cam);
  Frame b = render(t, axis_camera(20.0), cam);
  REQUIRE(a.pixels == b.pixels);
}

TEST_CASE("deep lumen is darker than the near wall") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  Frame f = render(t, axis_camera(20.0), cam);
  const int c = 32;
  const int center = f.gray(c, c);
  // Mid-edge: halfway between center and frame edge.
  const int mid_edge_l = f.gray(c / 2, c);
  const int mid_edge_t = f.gray(c, c / 2);
  REQUIRE(center < mid_edge_l);
  REQUIRE(center < mid_edge_t);
}

TEST_CASE("intensity is non-increasing with ray depth on the cylinder fixture") {
  // Long cylinder: the far cap sits beyond the ray budget, so every hit is a
  // side-wall hit and deep rays march into black.
  AirwayTree t = straight_tube(800.0, 6.0);
  t.spec.scale = 96.0;
  CameraIntrinsics cam;
  Frame f = render(t, axis_camera(10.0), cam);
  // Along a horizontal line through the center, hit depth grows monotonically
  // from the edge pixel to the center pixel, so intensity must not grow.
  const int c = 32;
  int prev = f.gray(0, c);
  for (int x = 1; x <= c; ++x) {
    int cur = f.gray(x, c);
    REQUIRE(cur <= prev);
    prev = cur;
  }
  REQUIRE(f.gray(0, c) > f.gray(c, c));
}

TEST_CASE("all pixels are valid bytes and frames are not constant") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  Frame f = render(t, axis_camera(30.0), cam);
  int mn = 255, mx = 0;
  for (std::uint8_t v : f.pixels) {
    mn = std::min<int>(mn, v);
    mx = std::max<int>(mx, v);
  }
  REQUIRE(mx > mn);  // variance > 0
  // Channels replicated.
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      REQUIRE(f.at(x, y, 0) == f.at(x, y, 1));
      REQUIRE(f.at(x, y, 0) == f.at(x, y, 2));
    }
}

TEST_CASE("camera outside the lumen is an error") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  Pose outside = axis_camera(20.0);
  outside.position.y = 20.0;
  REQUIRE_THROWS_AS(render(t, outside, cam), PreconditionError);
}

TEST_CASE("roll equivariance against the rotated-image oracle") {
  AirwayTree t = straight_tube(96.0, 6.0);
  // Slightly off-axis camera so the image is not rotationally symmetric.
  PatientSpec spec;
  CameraIntrinsics cam;
  NavigationPath path = NavigationPath::from_points({{0, 0, 0}, {40, 2, 1}, {96, -3, 2}});
  AirwaySdf sdf(t);
  const double s = 18.0;
  const double theta = kPi / 5.0;
  Pose unrolled = camera_pose_at(path, s, 4.0, 0.0);
  Pose rolled = camera_pose_at(path, s, 4.0, theta);
  Frame f0 = render(sdf, unrolled, cam);
  Frame f1 = render(sdf, rolled, cam);

  // Rolling the camera by +theta rotates the image content: the rolled frame
  // at (sx, sy) shows the unrolled frame at Rot(-theta) (sx, sy).
  Frame expect;
  expect.width = cam.width;
  expect.height = cam.height;
  expect.pixels.assign(static_cast<std::size_t>(cam.width * cam.height * 3), 0);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int py = 0; py < cam.height; ++py) {
    const double sy = 1.0 - 2.0 * (py + 0.5) / cam.height;
    for (int px = 0; px < cam.width; ++px) {
      const double sx = 2.0 * (px + 0.5) / cam.width - 1.0;
      const double rx = ct * sx + st * sy;
      const double ry = -st * sx + ct * sy;
      const double v = sample_gray(f0, rx, ry);
      const std::size_t idx = static_cast<std::size_t>((py * cam.width + px) * 3);
      const auto b = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      expect.pixels[idx] = expect.pixels[idx + 1] = expect.pixels[idx + 2] = b;
    }
  }
  const double mad = mean_abs_diff_in_disk(f1, expect, cam.width / 2.0 - 2.0);
  REQUIRE(mad < 8.0 / 255.0);
}

TEST_CASE("render_trajectory basics") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  REQUIRE(render_trajectory(t, {}, cam).empty());
  std::vector<Pose> one = {axis_camera(15.0)};
  auto fs = render_trajectory(t, one, cam);
  REQUIRE(fs.size() == 1);
  REQUIRE(fs[0].pixels == render(t, one[0], cam).pixels);
}

TEST_CASE("render_trajectory renders a 10-pose path with nonconstant frames") {
  PatientSpec spec;
  spec.seed = 4;
  AirwayTree t = generate_patient(spec);
  NavigationPath path = centerline_path(t, LobeLabel::UpperRight, 1);
  CameraIntrinsics cam;
  std::vector<Pose> poses;
  for (int i = 0; i < 10; ++i)
    poses.push_back(camera_pose_at(path, 2.0 + 3.0 * i, 4.0, 0.0));
  auto frames = render_trajectory(t, poses, cam);
  REQUIRE(frames.size() == 10);
  for (const Frame& f : frames) {
    int mn = 255, mx = 0;
    for (std::uint8_t v : f.pixels) {
      mn = std::min<int>(mn, v);
      mx = std::max<int>(mx, v);
    }
    REQUIRE(mx > mn);
  }
}

TEST_CASE("render_trajectory is byte-identical across jobs") {
  PatientSpec spec;
  spec.seed = 6;
  AirwayTree t = generate_patient(spec);
  NavigationPath path = centerline_path(t, LobeLabel::LowerRight, 1);
  CameraIntrinsics cam;
  cam.width = cam.height = 32;
  std::vector<Pose> poses;
  for (int i = 0; i < 7; ++i)
    poses.push_back(camera_pose_at(path, 2.0 + 4.0 * i, 4.0, 0.1 * i));
  auto seq = render_trajectory(t, poses, cam, 1);
  auto par = render_trajectory(t, poses, cam, 3);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) REQUIRE(seq[i].pixels == par[i].pixels);
}

TEST_CASE("render_trajectory reports the failing frame index") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  Pose bad = axis_camera(20.0);
  bad.position.y = 30.0;
  std::vector<Pose> poses = {axis_camera(10.0), bad};
  try {
    render_trajectory(t, poses, cam);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("frame 1") != std::string::npos);
  }
}

TEST_CASE("ppm round-trip") {
  AirwayTree t = straight_tube();
  CameraIntrinsics cam;
  cam.width = 32;
  cam.height = 24;
  Frame f = render(t, axis_camera(25.0), cam);
  auto dir = std::filesystem::temp_directory_path() / "lumenpose_ppm_test";
  std::filesystem::create_directories(dir);
  write_ppm(f, dir / "frame.ppm");
  Frame back = read_ppm(dir / "frame.ppm");
  REQUIRE(back.width == f.width);
  REQUIRE(back.height == f.height);
  REQUIRE(back.pixels == f.pixels);
  std::filesystem::remove_all(dir);
}

TEST_CASE("camera intrinsics validation") {
  CameraIntrinsics cam;
  cam.width = 4;
  REQUIRE_THROWS_AS(cam.validate(), ConfigError);
  CameraIntrinsics cam2;
  cam2.vertical_fov = 3.2;
  REQUIRE_THROWS_AS(cam2.validate(), ConfigError);
}
