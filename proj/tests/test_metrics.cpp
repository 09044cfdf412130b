#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lumenpose/metrics.hpp"
#include "lumenpose/rng.hpp"

using namespace lumenpose;

TEST_CASE("position_error zero case") {
  Vec3 v{1.5, -2.0, 0.25};
  REQUIRE(position_error(v, v, MetricKind::PositionL2) == 0.0);
  REQUIRE(position_error(v, v, MetricKind::PositionMSE) == 0.0);
}

TEST_CASE("position_error 3-4-5 triangle") {
  REQUIRE(position_error({3, 4, 0}, {0, 0, 0}, MetricKind::PositionL2) == Catch::Approx(5.0));
}

TEST_CASE("position_error MSE") {
  // Oracle: (1 + 4 + 4) / 3 = 3.
  double mse = position_error({1, 2, 2}, {0, 0, 0}, MetricKind::PositionMSE);
  REQUIRE(mse == Catch::Approx((1.0 + 4.0 + 4.0) / 3.0));
  REQUIRE(mse == Catch::Approx(3.0));
}

TEST_CASE("position_error rejects rotation kinds") {
  REQUIRE_THROWS_AS(position_error({0, 0, 0}, {0, 0, 0}, MetricKind::CosinusError),
                    PreconditionError);
}

TEST_CASE("rotation_error_l2 mirrors position formulas") {
  Vec3 z{0, 0, 0};
  REQUIRE(rotation_error_l2(z, z, MetricKind::RotationL2) == 0.0);
  REQUIRE(rotation_error_l2({3, 4, 0}, z, MetricKind::RotationL2) == Catch::Approx(5.0));
  REQUIRE(rotation_error_l2({1, 2, 2}, z, MetricKind::RotationMSE) == Catch::Approx(3.0));
}

TEST_CASE("rotation_error_l2 does not wrap, wrapped variant does") {
  Vec3 est{kTwoPi, 0, 0};
  Vec3 gt{0, 0, 0};
  REQUIRE(rotation_error_l2(est, gt, MetricKind::RotationL2) == Catch::Approx(kTwoPi));
  REQUIRE(rotation_error_l2_wrapped(est, gt) <= 1e-12);
}

TEST_CASE("direction_error zero case") {
  Vec3 o{0.3, -0.1, 0.8};
  REQUIRE(direction_error(o, o) == 0.0);
}

TEST_CASE("direction_error blind to roll about the look-at axis") {
  // est differs from gt by a body-frame rotation about u = x: DE stays 0.
  Rng rng(42);
  for (int i = 0; i < 500; ++i) {
    EulerAngles gt{rng.uniform(-kPi, kPi), rng.uniform(-1.4, 1.4), rng.uniform(-kPi, kPi)};
    double delta = rng.uniform(-kPi, kPi);
    Mat3 r_est = euler_to_rotation(gt) * rotation_x(delta);
    EulerAngles est = rotation_to_euler(r_est);
    REQUIRE(direction_error(est.as_vec3(), gt.as_vec3()) <= 1e-9);
  }
  // Pure alpha difference at beta = gamma = 0 is such a roll.
  for (int i = 0; i < 100; ++i) {
    Vec3 est{rng.uniform(-kPi, kPi), 0, 0};
    Vec3 gt{rng.uniform(-kPi, kPi), 0, 0};
    REQUIRE(direction_error(est, gt) <= 1e-9);
  }
}

TEST_CASE("direction_error quarter turn") {
  // v_est = (0,0,-1), v_gt = (1,0,0): dot = 0 -> pi/2.
  REQUIRE(direction_error({0, kPi / 2, 0}, {0, 0, 0}) == Catch::Approx(kPi / 2).margin(1e-12));
}

TEST_CASE("direction_error is symmetric and in range") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    Vec3 a{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    Vec3 b{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    double de = direction_error(a, b);
    REQUIRE(de >= 0.0);
    REQUIRE(de <= kPi);
    REQUIRE(de == Catch::Approx(direction_error(b, a)).margin(1e-12));
  }
}

TEST_CASE("direction_error rejects non-unit u") {
  REQUIRE_THROWS_AS(direction_error({0, 0, 0}, {0, 0, 0}, Vec3{0, 0, 2}), PreconditionError);
}

TEST_CASE("cosinus_error basics") {
  Vec3 z{0, 0, 0};
  REQUIRE(cosinus_error(z, z) == 0.0);
  REQUIRE(cosinus_error({kPi, kPi, kPi}, z) == Catch::Approx(2.0));
  REQUIRE(cosinus_error({kPi / 2, 0, 0}, z) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("cosinus_error range and zero set") {
  Rng rng(23);
  for (int i = 0; i < 10000; ++i) {
    Vec3 a{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    Vec3 b{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    double ce = cosinus_error(a, b);
    REQUIRE(ce >= 0.0);
    REQUIRE(ce <= 2.0);
  }
  // CE = 0 iff every component difference is a multiple of 2pi.
  for (int k = -2; k <= 2; ++k) {
    Vec3 a{k * kTwoPi, -k * kTwoPi, k * kTwoPi};
    REQUIRE(cosinus_error(a, {0, 0, 0}) <= 1e-12);
  }
  REQUIRE(cosinus_error({0.3, 0, 0}, {0, 0, 0}) > 1e-3);
}

TEST_CASE("cosinus_error is 2pi-periodic per component") {
  Rng rng(29);
  for (int i = 0; i < 1000; ++i) {
    Vec3 a{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    Vec3 b{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    Vec3 shifted{a.x + kTwoPi, a.y - kTwoPi, a.z + 2 * kTwoPi};
    REQUIRE(cosinus_error(a, b) == Catch::Approx(cosinus_error(shifted, b)).margin(1e-9));
  }
}

TEST_CASE("cosinus_error has no blind spot") {
  // Any single component offset that is not a multiple of 2pi gives CE > 0,
  // including pure-alpha offsets that DE cannot see.
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    double off = rng.uniform(0.05, kTwoPi - 0.05);
    Vec3 gt{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    Vec3 est = gt;
    est.x += off;
    REQUIRE(cosinus_error(est, gt) > 0.0);
  }
}

TEST_CASE("combined_loss zero for perfect prediction") {
  DeltaPose d{{0.5, -1.0, 2.0}, {0.1, 0.2, -0.3}};
  for (const char* name : {"mse-mse", "mse-de", "mse-ce"}) {
    LossCombo combo = LossCombo::from_name(name);
    REQUIRE(combined_loss(combo, d, d) == Catch::Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("combined_loss MSE+CE fixture") {
  // Position differs by (1,2,2): MSE = 3. One angle off by pi/2: CE = 1/3.
  DeltaPose pred{{1, 2, 2}, {kPi / 2, 0, 0}};
  DeltaPose gt{{0, 0, 0}, {0, 0, 0}};
  LossCombo combo = LossCombo::from_name("mse-ce");
  REQUIRE(combined_loss(combo, pred, gt) == Catch::Approx(3.0 + 1.0 / 3.0));
}

TEST_CASE("combined_loss MSE+MSE fixture") {
  DeltaPose pred{{0, 0, 0}, {1, 2, 2}};
  DeltaPose gt{{0, 0, 0}, {0, 0, 0}};
  LossCombo combo = LossCombo::from_name("mse-mse");
  REQUIRE(combined_loss(combo, pred, gt) == Catch::Approx(3.0));
}

TEST_CASE("combined_loss is the exact sum of its parts") {
  Rng rng(37);
  for (int i = 0; i < 200; ++i) {
    DeltaPose pred{{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)},
                   {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}};
    DeltaPose gt{{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)},
                 {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}};
    LossCombo combo = LossCombo::from_name("mse-ce");
    double expect = position_error(pred.dp, gt.dp, MetricKind::PositionMSE) +
                    cosinus_error(pred.dorient, gt.dorient);
    REQUIRE(combined_loss(combo, pred, gt) == expect);
  }
}

TEST_CASE("LossCombo validation") {
  LossCombo bad;
  bad.position = MetricKind::PositionL2;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  LossCombo bad2;
  bad2.orientation = MetricKind::PositionMSE;
  REQUIRE_THROWS_AS(bad2.validate(), ConfigError);
  REQUIRE_THROWS_AS(LossCombo::from_name("l2-l2"), ConfigError);
}
