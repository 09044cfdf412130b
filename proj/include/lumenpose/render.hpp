#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "lumenpose/airway.hpp"
#include "lumenpose/errors.hpp"
#include "lumenpose/pose.hpp"

namespace lumenpose {

struct CameraIntrinsics {
  int width = 64;
  int height = 64;
  double vertical_fov = kPi / 3.0;  // radians
  double near_clip = 0.0;           // voxels

  void validate() const {
    if (width < 8 || height < 8)
      throw ConfigError("CameraIntrinsics: width and height must be >= 8");
    if (!(vertical_fov > 0.0 && vertical_fov < kPi))
      throw ConfigError("CameraIntrinsics: vertical_fov must be in (0, pi)");
    if (near_clip < 0.0) throw ConfigError("CameraIntrinsics: near_clip must be >= 0");
  }
};

// 8-bit image, H x W x 3, all three channels identical (grayscale shading
// replicated to RGB).
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  std::uint8_t at(int x, int y, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t gray(int x, int y) const { return at(x, y, 0); }
};

namespace detail {

// Sphere tracing from inside the lumen: march on |sdf| until the wall is
// within hit_eps. 128 steps maximum; misses shade as black.
struct RaymarchResult {
  bool hit = false;
  double depth = 0.0;
  Vec3 point;
};

inline RaymarchResult raymarch(const AirwaySdf& sdf, const Vec3& origin, const Vec3& dir,
                               double t_start, double hit_eps, double t_max, int max_steps = 128) {
  double t = t_start;
  for (int i = 0; i < max_steps; ++i) {
    const Vec3 p = origin + dir * t;
    const double d = std::abs(sdf(p));
    if (d < hit_eps) return {true, t, p};
    t += d;
    if (t > t_max) break;
  }
  return {false, 0.0, {}};
}

inline std::uint8_t tone_map(double shade) {
  const double clamped = std::clamp(shade, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * std::sqrt(clamped)));
}

}  // namespace detail

// Renders the lumen around `pose` by sphere tracing the tree's signed
// distance field. Shading is Lambertian with a headlight at the camera and
// inverse-square distance falloff, tone mapped to 8 bits. Deterministic:
// identical inputs produce byte-identical frames.
inline Frame render(const AirwaySdf& sdf, const Pose& pose, const CameraIntrinsics& cam) {
  cam.validate();
  if (!(sdf(pose.position) < 0.0))
    throw PreconditionError("render: camera position is outside the lumen");

  const double scale = sdf.scale();
  const double hit_eps = 1e-3 * scale;
  const double t_max = 4.0 * scale;
  const double falloff = scale / 4.0;

  const Mat3 r = euler_to_rotation(pose.orientation);
  const Vec3 fwd = r.col(0);
  const Vec3 left = r.col(1);  // u x f
  const Vec3 up = r.col(2);
  const Vec3 right = -left;

  const double half_h = std::tan(cam.vertical_fov / 2.0);
  const double half_w = half_h * static_cast<double>(cam.width) / static_cast<double>(cam.height);

  Frame frame;
  frame.width = cam.width;
  frame.height = cam.height;
  frame.pixels.assign(static_cast<std::size_t>(cam.width * cam.height * 3), 0);

  for (int py = 0; py < cam.height; ++py) {
    const double sy = 1.0 - 2.0 * (static_cast<double>(py) + 0.5) / static_cast<double>(cam.height);
    for (int px = 0; px < cam.width; ++px) {
      const double sx = 2.0 * (static_cast<double>(px) + 0.5) / static_cast<double>(cam.width) - 1.0;
      const Vec3 dir = (fwd + right * (sx * half_w) + up * (sy * half_h)).normalized();
      const auto hit = detail::raymarch(sdf, pose.position, dir, cam.near_clip, hit_eps, t_max);
      std::uint8_t v = 0;
      if (hit.hit) {
        const Vec3 grad = sdf.gradient(hit.point, hit_eps);
        const double gn = grad.norm();
        // Wall normal facing the lumen interior.
        const Vec3 n = gn > 1e-12 ? grad / (-gn) : -dir;
        const Vec3 to_light = (pose.position - hit.point);
        const double dist = to_light.norm();
        const double lambert = dist > 1e-12 ? std::max(0.0, n.dot(to_light / dist)) : 1.0;
        const double atten = 1.0 / (1.0 + (dist / falloff) * (dist / falloff));
        v = detail::tone_map(lambert * atten);
      }
      const std::size_t idx = static_cast<std::size_t>((py * cam.width + px) * 3);
      frame.pixels[idx] = v;
      frame.pixels[idx + 1] = v;
      frame.pixels[idx + 2] = v;
    }
  }
  return frame;
}

inline Frame render(const AirwayTree& tree, const Pose& pose, const CameraIntrinsics& cam) {
  return render(AirwaySdf(tree), pose, cam);
}

// Elementwise render, order-preserving. Frames are independent, so jobs > 1
// splits the sequence across threads without changing any output byte.
inline std::vector<Frame> render_trajectory(const AirwayTree& tree, const std::vector<Pose>& poses,
                                            const CameraIntrinsics& cam, int jobs = 1) {
  AirwaySdf sdf(tree);
  std::vector<Frame> frames(poses.size());
  std::vector<std::string> errors(poses.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        frames[i] = render(sdf, poses[i], cam);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_jobs = std::max(1, jobs);
  if (n_jobs == 1 || poses.size() < 2) {
    work(0, poses.size());
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (poses.size() + static_cast<std::size_t>(n_jobs) - 1) /
                              static_cast<std::size_t>(n_jobs);
    for (int j = 0; j < n_jobs; ++j) {
      const std::size_t b = static_cast<std::size_t>(j) * chunk;
      const std::size_t e = std::min(poses.size(), b + chunk);
      if (b >= e) break;
      threads.emplace_back(work, b, e);
    }
    for (auto& t : threads) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw Error("render_trajectory: frame " + std::to_string(i) + ": " + errors[i]);
  return frames;
}

// Binary PPM (P6, maxval 255).
inline void write_ppm(const Frame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()),
            static_cast<std::streamsize>(frame.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline Frame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
    throw IoError("unsupported PPM header in " + path.string());
  in.get();  // single whitespace after header
  Frame f;
  f.width = w;
  f.height = h;
  f.pixels.resize(static_cast<std::size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(f.pixels.data()),
          static_cast<std::streamsize>(f.pixels.size()));
  if (!in) throw IoError("truncated PPM " + path.string());
  return f;
}

}  // namespace lumenpose
