#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lumenpose/pose.hpp"
#include "lumenpose/rng.hpp"

using namespace lumenpose;

namespace {

// Independent wrap oracle: repeated shifting instead of remainder().
double wrap_oracle(double x) {
  double w = x;
  while (w > kPi) w -= kTwoPi;
  while (w <= -kPi) w += kTwoPi;
  return w;
}

}  // namespace

TEST_CASE("euler_to_rotation identity") {
  Mat3 r = euler_to_rotation({0, 0, 0});
  REQUIRE(r.max_abs_diff(Mat3::identity()) == 0.0);
}

TEST_CASE("euler_to_rotation first row at beta = pi/2") {
  Mat3 r = euler_to_rotation({0, kPi / 2, 0});
  REQUIRE(r(0, 0) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(r(0, 1) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(r(0, 2) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("euler_to_rotation is orthonormal with det 1") {
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    EulerAngles e{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    Mat3 r = euler_to_rotation(e);
    REQUIRE(orthonormality_defect(r) <= 1e-9);
    REQUIRE(std::abs(r.det() - 1.0) <= 1e-9);
  }
}

TEST_CASE("rotation_to_euler identity") {
  EulerAngles e = rotation_to_euler(Mat3::identity());
  REQUIRE(e.alpha == 0.0);
  REQUIRE(e.beta == 0.0);
  REQUIRE(e.gamma == 0.0);
}

TEST_CASE("rotation_to_euler round-trips a fixed triple") {
  EulerAngles in{0.3, -0.2, 1.1};
  EulerAngles out = rotation_to_euler(euler_to_rotation(in));
  REQUIRE(out.alpha == Catch::Approx(in.alpha).margin(1e-9));
  REQUIRE(out.beta == Catch::Approx(in.beta).margin(1e-9));
  REQUIRE(out.gamma == Catch::Approx(in.gamma).margin(1e-9));
}

TEST_CASE("rotation_to_euler round-trips random non-gimbal triples") {
  Rng rng(2024);
  const double beta_lim = kPi / 2 - 0.01;
  for (int i = 0; i < 10000; ++i) {
    EulerAngles in{rng.uniform(-kPi + 1e-6, kPi), rng.uniform(-beta_lim, beta_lim),
                   rng.uniform(-kPi + 1e-6, kPi)};
    EulerAngles out = rotation_to_euler(euler_to_rotation(in));
    REQUIRE(std::abs(out.alpha - in.alpha) <= 1e-9);
    REQUIRE(std::abs(out.beta - in.beta) <= 1e-9);
    REQUIRE(std::abs(out.gamma - in.gamma) <= 1e-9);
  }
}

TEST_CASE("rotation_to_euler gimbal branch reconstructs the matrix") {
  // beta = +pi/2 exactly: R13 = 1.
  for (double alpha : {0.4, -1.2, 2.9}) {
    for (double gamma : {0.0, 0.7, -2.1}) {
      Mat3 r = euler_to_rotation({alpha, kPi / 2, gamma});
      EulerAngles e = rotation_to_euler(r);
      REQUIRE(e.gamma == 0.0);
      Mat3 back = euler_to_rotation(e);
      REQUIRE(back.max_abs_diff(r) <= 1e-7);
    }
  }
  for (double alpha : {0.4, -1.2}) {
    Mat3 r = euler_to_rotation({alpha, -kPi / 2, 0.8});
    EulerAngles e = rotation_to_euler(r);
    Mat3 back = euler_to_rotation(e);
    REQUIRE(back.max_abs_diff(r) <= 1e-7);
  }
}

TEST_CASE("rotation_to_euler rejects non-orthonormal input") {
  Mat3 bad = Mat3::identity();
  bad(0, 0) = 1.01;
  REQUIRE_THROWS_AS(rotation_to_euler(bad), InvalidRotationError);
}

TEST_CASE("direction_vector basics") {
  Vec3 v = direction_vector({0, 0, 0});
  REQUIRE(v.x == 1.0);
  REQUIRE(v.y == 0.0);
  REQUIRE(v.z == 0.0);
}

TEST_CASE("direction_vector ignores alpha when beta = gamma = 0") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    double a = rng.uniform(-kPi, kPi);
    Vec3 v = direction_vector({a, 0, 0});
    REQUIRE(std::abs(v.x - 1.0) <= 1e-12);
    REQUIRE(std::abs(v.y) <= 1e-12);
    REQUIRE(std::abs(v.z) <= 1e-12);
  }
}

TEST_CASE("direction_vector matches the first-column formula") {
  // Oracle: v = (cb*cg, sa*sb*cg + ca*sg, -ca*sb*cg + sa*sg).
  auto oracle = [](const EulerAngles& e) {
    double ca = std::cos(e.alpha), sa = std::sin(e.alpha);
    double cb = std::cos(e.beta), sb = std::sin(e.beta);
    double cg = std::cos(e.gamma), sg = std::sin(e.gamma);
    return Vec3{cb * cg, sa * sb * cg + ca * sg, -ca * sb * cg + sa * sg};
  };
  // At (0, pi/2, 0) the formula gives (0, 0, -1).
  Vec3 v = direction_vector({0, kPi / 2, 0});
  Vec3 expect = oracle({0, kPi / 2, 0});
  REQUIRE(std::abs(expect.z - (-1.0)) <= 1e-12);
  REQUIRE(std::abs(v.x - expect.x) <= 1e-12);
  REQUIRE(std::abs(v.y - expect.y) <= 1e-12);
  REQUIRE(std::abs(v.z - expect.z) <= 1e-12);

  Rng rng(55);
  for (int i = 0; i < 500; ++i) {
    EulerAngles e{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    Vec3 got = direction_vector(e);
    Vec3 want = oracle(e);
    REQUIRE(std::abs(got.x - want.x) <= 1e-12);
    REQUIRE(std::abs(got.y - want.y) <= 1e-12);
    REQUIRE(std::abs(got.z - want.z) <= 1e-12);
  }
}

TEST_CASE("direction_vector output has unit norm") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    EulerAngles e{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    REQUIRE(std::abs(direction_vector(e).norm() - 1.0) <= 1e-12);
  }
}

TEST_CASE("direction_vector rejects non-unit u") {
  REQUIRE_THROWS_AS(direction_vector({0, 0, 0}, Vec3{1, 1, 0}), PreconditionError);
}

TEST_CASE("delta_pose of identical poses is zero") {
  Pose a{{1, 2, 3}, {0.1, 0.2, 0.3}};
  DeltaPose d = delta_pose(a, a);
  REQUIRE(d.dp.norm() == 0.0);
  REQUIRE(d.dorient.norm() == 0.0);
}

TEST_CASE("delta_pose wraps angle differences") {
  Pose a{{0, 0, 0}, {0, 0, 3.0}};
  Pose b{{0, 0, 0}, {0, 0, -3.0}};
  DeltaPose d = delta_pose(a, b);
  REQUIRE(d.dorient.z == Catch::Approx(wrap_oracle(-6.0)).margin(1e-12));
  REQUIRE(d.dorient.z == Catch::Approx(kTwoPi - 6.0).margin(1e-12));
}

TEST_CASE("delta_pose position difference is componentwise") {
  Pose a{{0, 0, 0}, {}};
  Pose b{{1, -2, 3}, {}};
  DeltaPose d = delta_pose(a, b);
  REQUIRE(d.dp.x == 1.0);
  REQUIRE(d.dp.y == -2.0);
  REQUIRE(d.dp.z == 3.0);
}

TEST_CASE("delta_pose wrap agrees with oracle on random angles") {
  Rng rng(31);
  for (int i = 0; i < 2000; ++i) {
    double x = rng.uniform(-20.0, 20.0);
    REQUIRE(wrap_angle(x) == Catch::Approx(wrap_oracle(x)).margin(1e-12));
    REQUIRE(wrap_angle(x) > -kPi);
    REQUIRE(wrap_angle(x) <= kPi);
  }
}

TEST_CASE("accumulate with empty deltas returns p0") {
  Pose p0{{4, 5, 6}, {0.4, -0.5, 0.6}};
  Pose out = accumulate(p0, {});
  REQUIRE(out.position.x == p0.position.x);
  REQUIRE(out.orientation.gamma == p0.orientation.gamma);
}

TEST_CASE("accumulate telescopes over a ground-truth path") {
  Rng rng(77);
  std::vector<Pose> poses;
  Pose p{{0, 0, 0}, {0.1, -0.2, 0.3}};
  poses.push_back(p);
  for (int i = 0; i < 120; ++i) {
    p.position += Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    p.orientation.alpha = wrap_angle(p.orientation.alpha + rng.uniform(-0.4, 0.4));
    p.orientation.beta = wrap_angle(p.orientation.beta + rng.uniform(-0.4, 0.4));
    p.orientation.gamma = wrap_angle(p.orientation.gamma + rng.uniform(-0.4, 0.4));
    poses.push_back(p);
  }
  std::vector<DeltaPose> deltas;
  for (std::size_t i = 0; i + 1 < poses.size(); ++i)
    deltas.push_back(delta_pose(poses[i], poses[i + 1]));
  Pose acc = accumulate(poses.front(), deltas);
  const Pose& last = poses.back();
  REQUIRE(std::abs(acc.position.x - last.position.x) <= 1e-9);
  REQUIRE(std::abs(acc.position.y - last.position.y) <= 1e-9);
  REQUIRE(std::abs(acc.position.z - last.position.z) <= 1e-9);
  REQUIRE(std::abs(wrap_angle(acc.orientation.alpha - last.orientation.alpha)) <= 1e-9);
  REQUIRE(std::abs(wrap_angle(acc.orientation.beta - last.orientation.beta)) <= 1e-9);
  REQUIRE(std::abs(wrap_angle(acc.orientation.gamma - last.orientation.gamma)) <= 1e-9);
}

TEST_CASE("accumulate cancels opposite deltas") {
  Pose p0{{1, 1, 1}, {0.2, 0.2, 0.2}};
  DeltaPose plus{{1, 0, 0}, {0.1, 0, 0}};
  DeltaPose minus{{-1, 0, 0}, {-0.1, 0, 0}};
  Pose out = accumulate(p0, {plus, minus});
  REQUIRE(out.position.x == Catch::Approx(p0.position.x).margin(1e-12));
  REQUIRE(out.orientation.alpha == Catch::Approx(p0.orientation.alpha).margin(1e-12));
}

TEST_CASE("accumulate is order-insensitive within fp tolerance") {
  Rng rng(13);
  std::vector<DeltaPose> deltas;
  for (int i = 0; i < 50; ++i)
    deltas.push_back({{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)},
                      {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)}});
  Pose p0{{0, 0, 0}, {0, 0, 0}};
  Pose a = accumulate(p0, deltas);
  std::vector<DeltaPose> shuffled = deltas;
  rng.shuffle(shuffled);
  Pose b = accumulate(p0, shuffled);
  REQUIRE(std::abs(a.position.x - b.position.x) <= 1e-9);
  REQUIRE(std::abs(a.position.y - b.position.y) <= 1e-9);
  REQUIRE(std::abs(a.position.z - b.position.z) <= 1e-9);
  REQUIRE(std::abs(a.orientation.alpha - b.orientation.alpha) <= 1e-9);
}

TEST_CASE("axis_angle_rotation matches sandwich composition") {
  // Rotating about the x axis equals rotation_x.
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    double a = rng.uniform(-kPi, kPi);
    REQUIRE(axis_angle_rotation({1, 0, 0}, a).max_abs_diff(rotation_x(a)) <= 1e-12);
    REQUIRE(axis_angle_rotation({0, 1, 0}, a).max_abs_diff(rotation_y(a)) <= 1e-12);
    REQUIRE(axis_angle_rotation({0, 0, 1}, a).max_abs_diff(rotation_z(a)) <= 1e-12);
  }
}
