#pragma once

#include "mmt/core.hpp"

#include <cmath>

namespace mmt {

struct RollPitchYaw {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

/// Checks orthonormal columns and det = +1 within `tol`.
inline bool is_rotation(const Mat3& m, double tol = 1e-9) {
  if (!m.allFinite()) return false;
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m.determinant() - 1.0) <= tol;
}

/// Z-Y-X composition: R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline Mat3 rpy_to_rotation(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Mat3 m;
  m << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp,     cp * sr,                cp * cr;
  return m;
}

inline Mat3 rpy_to_rotation(const RollPitchYaw& a) { return rpy_to_rotation(a.roll, a.pitch, a.yaw); }

/// Inverse of rpy_to_rotation. At gimbal lock (pitch = +-pi/2) roll is fixed to 0
/// and yaw takes the remaining free angle.
inline RollPitchYaw rotation_to_rpy(const Mat3& m) {
  if (!is_rotation(m)) {
    throw InvariantError("RotationMatrix", "input is not orthonormal with det +1");
  }
  RollPitchYaw out;
  const double cos_pitch = std::hypot(m(0, 0), m(1, 0));
  out.pitch = std::atan2(-m(2, 0), cos_pitch);
  if (cos_pitch < 1e-10) {
    out.roll = 0.0;
    out.yaw = std::atan2(-m(0, 1), m(1, 1));
  } else {
    out.roll = std::atan2(m(2, 1), m(2, 2));
    out.yaw = std::atan2(m(1, 0), m(0, 0));
  }
  return out;
}

}  // namespace mmt
