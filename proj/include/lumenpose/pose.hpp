#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "lumenpose/errors.hpp"

namespace lumenpose {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// Wraps an angle to the canonical range (-pi, pi].
inline double wrap_angle(double x) {
  double w = std::remainder(x, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    if (n == 0.0) throw PreconditionError("cannot normalize zero vector");
    return *this / n;
  }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Positions are continuous voxel coordinates of the anatomy grid.
using Position = Vec3;

struct EulerAngles {
  double alpha = 0.0;  // rotation about x, radians
  double beta = 0.0;   // rotation about y, radians
  double gamma = 0.0;  // rotation about z, radians

  EulerAngles() = default;
  EulerAngles(double a, double b, double g) : alpha(a), beta(b), gamma(g) {}

  Vec3 as_vec3() const { return {alpha, beta, gamma}; }
  static EulerAngles from_vec3(const Vec3& v) { return {v.x, v.y, v.z}; }

  EulerAngles wrapped() const {
    return {wrap_angle(alpha), wrap_angle(beta), wrap_angle(gamma)};
  }
};

struct Pose {
  Position position;
  EulerAngles orientation;
};

// 6-component pose difference: (dx, dy, dz) voxels, (dalpha, dbeta, dgamma) radians.
struct DeltaPose {
  Vec3 dp;
  Vec3 dorient;
};

// Row-major 3x3 matrix.
class Mat3 {
 public:
  Mat3() : m_{} {}
  explicit Mat3(const std::array<double, 9>& m) : m_(m) {}

  static Mat3 identity() {
    return Mat3({1, 0, 0, 0, 1, 0, 0, 0, 1});
  }
  static Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
    return Mat3({c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z});
  }

  double& operator()(int r, int c) { return m_[static_cast<std::size_t>(r * 3 + c)]; }
  double operator()(int r, int c) const { return m_[static_cast<std::size_t>(r * 3 + c)]; }

  Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }
  Vec3 col(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
        r(i, j) = acc;
      }
    return r;
  }

  Vec3 operator*(const Vec3& v) const {
    return {row(0).dot(v), row(1).dot(v), row(2).dot(v)};
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  double det() const {
    const Mat3& a = *this;
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  }

  double max_abs_diff(const Mat3& o) const {
    double m = 0.0;
    for (int i = 0; i < 9; ++i)
      m = std::max(m, std::abs(m_[static_cast<std::size_t>(i)] - o.m_[static_cast<std::size_t>(i)]));
    return m;
  }

 private:
  std::array<double, 9> m_;
};

using RotationMatrix = Mat3;

inline Mat3 rotation_x(double a) {
  double c = std::cos(a), s = std::sin(a);
  return Mat3({1, 0, 0, 0, c, -s, 0, s, c});
}

inline Mat3 rotation_y(double a) {
  double c = std::cos(a), s = std::sin(a);
  return Mat3({c, 0, s, 0, 1, 0, -s, 0, c});
}

inline Mat3 rotation_z(double a) {
  double c = std::cos(a), s = std::sin(a);
  return Mat3({c, -s, 0, s, c, 0, 0, 0, 1});
}

// Rodrigues rotation about a unit axis.
inline Mat3 axis_angle_rotation(const Vec3& axis, double angle) {
  if (std::abs(axis.norm() - 1.0) > 1e-9)
    throw PreconditionError("axis_angle_rotation requires a unit axis");
  double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  double x = axis.x, y = axis.y, z = axis.z;
  return Mat3({t * x * x + c, t * x * y - s * z, t * x * z + s * y,
               t * x * y + s * z, t * y * y + c, t * y * z - s * x,
               t * x * z - s * y, t * y * z + s * x, t * z * z + c});
}

// R = Rx(alpha) * Ry(beta) * Rz(gamma). First row is (cb*cg, -cb*sg, sb).
inline Mat3 euler_to_rotation(const EulerAngles& e) {
  double ca = std::cos(e.alpha), sa = std::sin(e.alpha);
  double cb = std::cos(e.beta), sb = std::sin(e.beta);
  double cg = std::cos(e.gamma), sg = std::sin(e.gamma);
  return Mat3({cb * cg, -cb * sg, sb,
               sa * sb * cg + ca * sg, -sa * sb * sg + ca * cg, -sa * cb,
               -ca * sb * cg + sa * sg, ca * sb * sg + sa * cg, ca * cb});
}

inline double orthonormality_defect(const Mat3& r) {
  return (r * r.transposed()).max_abs_diff(Mat3::identity());
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  return orthonormality_defect(r) <= tol && std::abs(r.det() - 1.0) <= tol;
}

// Inverse of euler_to_rotation. Throws InvalidRotationError when the input is
// not orthonormal within 1e-6. Near beta = +-pi/2 only alpha + gamma is
// determined; the gimbal branch fixes gamma = 0.
inline EulerAngles rotation_to_euler(const Mat3& r) {
  if (!is_rotation(r, 1e-6))
    throw InvalidRotationError("rotation_to_euler: matrix is not a rotation within 1e-6");
  double r13 = std::clamp(r(0, 2), -1.0, 1.0);
  if (std::abs(r13) > 1.0 - 1e-7) {
    // R21 = sin(alpha + sign(beta)*gamma), R22 = cos(alpha + sign(beta)*gamma); gamma := 0.
    double beta = r13 > 0 ? kPi / 2.0 : -kPi / 2.0;
    double alpha = r13 > 0 ? std::atan2(r(1, 0), r(1, 1)) : std::atan2(-r(1, 0), r(1, 1));
    return {alpha, beta, 0.0};
  }
  double beta = std::asin(r13);
  double gamma = std::atan2(-r(0, 1), r(0, 0));
  double alpha = std::atan2(-r(1, 2), r(2, 2));
  return {alpha, beta, gamma};
}

// Rotates the unit vector u by the rotation encoded in e. With the default
// u = (1,0,0) this is the camera look-at vector:
// (cb*cg, sa*sb*cg + ca*sg, -ca*sb*cg + sa*sg).
inline Vec3 direction_vector(const EulerAngles& e, const Vec3& u = Vec3{1.0, 0.0, 0.0}) {
  if (std::abs(u.norm() - 1.0) > 1e-9)
    throw PreconditionError("direction_vector requires |u| = 1");
  return euler_to_rotation(e) * u;
}

// Componentwise pose difference; angle differences wrapped to (-pi, pi].
inline DeltaPose delta_pose(const Pose& a, const Pose& b) {
  DeltaPose d;
  d.dp = b.position - a.position;
  d.dorient = {wrap_angle(b.orientation.alpha - a.orientation.alpha),
               wrap_angle(b.orientation.beta - a.orientation.beta),
               wrap_angle(b.orientation.gamma - a.orientation.gamma)};
  return d;
}

// Plain componentwise sum of p0 and all deltas. Angles are wrapped once at
// the end; pass wrap_result = false to keep the raw accumulated angles for
// diagnostic output.
inline Pose accumulate(const Pose& p0, const std::vector<DeltaPose>& deltas,
                       bool wrap_result = true) {
  Vec3 p = p0.position;
  Vec3 o = p0.orientation.as_vec3();
  for (const DeltaPose& d : deltas) {
    p += d.dp;
    o += d.dorient;
  }
  Pose out;
  out.position = p;
  out.orientation = EulerAngles::from_vec3(o);
  if (wrap_result) out.orientation = out.orientation.wrapped();
  return out;
}

}  // namespace lumenpose
