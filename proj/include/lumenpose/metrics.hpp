#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "lumenpose/errors.hpp"
#include "lumenpose/pose.hpp"

namespace lumenpose {

enum class MetricKind {
  PositionL2,
  PositionMSE,
  RotationL2,
  RotationMSE,
  DirectionError,
  CosinusError,
};

inline std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::PositionL2: return "position_l2";
    case MetricKind::PositionMSE: return "position_mse";
    case MetricKind::RotationL2: return "rotation_l2";
    case MetricKind::RotationMSE: return "rotation_mse";
    case MetricKind::DirectionError: return "de";
    case MetricKind::CosinusError: return "ce";
  }
  return "?";
}

// Training loss = position term + orientation term. The position term is
// always MSE; the orientation term is one of MSE, DE, CE.
struct LossCombo {
  MetricKind position = MetricKind::PositionMSE;
  MetricKind orientation = MetricKind::CosinusError;

  void validate() const {
    if (position != MetricKind::PositionMSE)
      throw ConfigError("LossCombo: position loss must be MSE");
    if (orientation != MetricKind::RotationMSE &&
        orientation != MetricKind::DirectionError &&
        orientation != MetricKind::CosinusError)
      throw ConfigError("LossCombo: orientation loss must be one of MSE, DE, CE");
  }

  std::string name() const {
    switch (orientation) {
      case MetricKind::RotationMSE: return "mse-mse";
      case MetricKind::DirectionError: return "mse-de";
      case MetricKind::CosinusError: return "mse-ce";
      default: return "mse-?";
    }
  }

  static LossCombo from_name(const std::string& name) {
    if (name == "mse-mse") return {MetricKind::PositionMSE, MetricKind::RotationMSE};
    if (name == "mse-de") return {MetricKind::PositionMSE, MetricKind::DirectionError};
    if (name == "mse-ce") return {MetricKind::PositionMSE, MetricKind::CosinusError};
    throw ConfigError("unknown loss combo '" + name + "' (expected mse-mse|mse-de|mse-ce)");
  }
};

// L2 = ||est - gt||, MSE = mean of squared componentwise differences.
inline double position_error(const Vec3& est, const Vec3& gt, MetricKind kind) {
  Vec3 d = est - gt;
  double ss = d.dot(d);
  if (kind == MetricKind::PositionL2) return std::sqrt(ss);
  if (kind == MetricKind::PositionMSE) return ss / 3.0;
  throw PreconditionError("position_error: kind must be PositionL2 or PositionMSE");
}

// Same formulas applied to the three angle components. Angle differences are
// used raw (no wrapping), matching how accumulated rotations are scored.
inline double rotation_error_l2(const Vec3& est, const Vec3& gt, MetricKind kind) {
  Vec3 d = est - gt;
  double ss = d.dot(d);
  if (kind == MetricKind::RotationL2) return std::sqrt(ss);
  if (kind == MetricKind::RotationMSE) return ss / 3.0;
  throw PreconditionError("rotation_error_l2: kind must be RotationL2 or RotationMSE");
}

// Wrapped variant reported alongside the raw L2 for diagnosis.
inline double rotation_error_l2_wrapped(const Vec3& est, const Vec3& gt) {
  Vec3 d{wrap_angle(est.x - gt.x), wrap_angle(est.y - gt.y), wrap_angle(est.z - gt.z)};
  return std::sqrt(d.dot(d));
}

// DE = arccos(v_e . v_gt) between the direction vectors obtained by rotating
// u with the two Euler triples. Blind to rotations about u composed in the
// body frame. Result in [0, pi]. Evaluated through the half-angle form
// 2 * atan2(|v_e - v_gt|, |v_e + v_gt|), which equals arccos of the clamped
// dot product on unit vectors but stays exact as the angle approaches 0.
inline double direction_error(const Vec3& est, const Vec3& gt,
                              const Vec3& u = Vec3{1.0, 0.0, 0.0}) {
  Vec3 ve = direction_vector(EulerAngles::from_vec3(est), u);
  Vec3 vg = direction_vector(EulerAngles::from_vec3(gt), u);
  return 2.0 * std::atan2((ve - vg).norm(), (ve + vg).norm());
}

// CE = (1/3) * sum_i (1 - cos(est_i - gt_i)). Bounded in [0, 2], 2pi-periodic
// per component, and sensitive to all three angles.
inline double cosinus_error(const Vec3& est, const Vec3& gt) {
  double acc = 0.0;
  for (int i = 0; i < 3; ++i) acc += 1.0 - std::cos(est[i] - gt[i]);
  return acc / 3.0;
}

// Unweighted sum of the configured position loss and orientation loss.
inline double combined_loss(const LossCombo& combo, const DeltaPose& pred, const DeltaPose& gt) {
  combo.validate();
  double pos = position_error(pred.dp, gt.dp, combo.position);
  double orient = 0.0;
  switch (combo.orientation) {
    case MetricKind::RotationMSE:
      orient = rotation_error_l2(pred.dorient, gt.dorient, MetricKind::RotationMSE);
      break;
    case MetricKind::DirectionError:
      orient = direction_error(pred.dorient, gt.dorient);
      break;
    case MetricKind::CosinusError:
      orient = cosinus_error(pred.dorient, gt.dorient);
      break;
    default:
      break;
  }
  return pos + orient;
}

}  // namespace lumenpose
