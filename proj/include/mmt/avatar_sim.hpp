#pragma once

// Kinematic avatar: a five-fingertip hand follows a wrist trajectory through a
// single-object scene. Each fingertip inside the object's diaphragm (the same
// shape scaled up) is tested against the true object surface and logged.

#include "mmt/core.hpp"
#include "mmt/rotation.hpp"
#include "mmt/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <variant>
#include <vector>

namespace mmt {

inline constexpr double kDefaultDiaphragmScale = 1.2;
inline constexpr int kFingertips = 5;

struct Box {
  Vec3 dims = Vec3::Constant(0.1);  // full edge lengths [m]
};

struct Cylinder {
  double radius = 0.05;  // [m], axis along the object z axis
  double height = 0.1;
};

using Shape = std::variant<Box, Cylinder>;

inline Shape scaled(const Shape& shape, double factor) {
  return std::visit(
      [factor](const auto& s) -> Shape {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) {
          return Box{s.dims * factor};
        } else {
          return Cylinder{s.radius * factor, s.height * factor};
        }
      },
      shape);
}

/// Half height of the shape along its own z axis.
inline double half_height(const Shape& shape) {
  return std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) {
          return 0.5 * s.dims.z();
        } else {
          return 0.5 * s.height;
        }
      },
      shape);
}

struct SurfaceQuery {
  double distance = 0.0;  // negative inside
  Vec3 normal = Vec3::UnitX();
};

namespace detail {

inline SurfaceQuery box_sdf(const Vec3& p, const Vec3& half) {
  const Vec3 q = p.cwiseAbs() - half;
  const Vec3 sign = p.unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
  SurfaceQuery out;
  const Vec3 outside = q.cwiseMax(0.0);
  const double out_norm = outside.norm();
  if (out_norm > 0.0) {
    out.distance = out_norm;
    out.normal = outside.cwiseProduct(sign) / out_norm;
    return out;
  }
  Eigen::Index axis = 0;
  out.distance = q.maxCoeff(&axis);
  out.normal = Vec3::Zero();
  out.normal[axis] = sign[axis];
  return out;
}

inline SurfaceQuery cylinder_sdf(const Vec3& p, double radius, double half_h) {
  const double r = std::hypot(p.x(), p.y());
  Vec3 radial = r > 0.0 ? Vec3(p.x() / r, p.y() / r, 0.0) : Vec3::UnitX();
  const double dz_sign = p.z() < 0.0 ? -1.0 : 1.0;
  const double qr = r - radius;
  const double qz = std::abs(p.z()) - half_h;
  SurfaceQuery out;
  if (qr > 0.0 || qz > 0.0) {
    const double a = std::max(qr, 0.0), b = std::max(qz, 0.0);
    out.distance = std::hypot(a, b);
    out.normal = (a * radial + b * dz_sign * Vec3::UnitZ()) / out.distance;
    return out;
  }
  if (qr >= qz) {
    out.distance = qr;
    out.normal = radial;
  } else {
    out.distance = qz;
    out.normal = dz_sign * Vec3::UnitZ();
  }
  return out;
}

}  // namespace detail

/// Signed distance from world point `p` to the surface of `shape` placed at `pose`,
/// with the outward unit normal of the distance field.
inline SurfaceQuery point_surface_distance(const Vec3& p, const Shape& shape, const Vec6& pose) {
  const Mat3 rot = rpy_to_rotation(pose[3], pose[4], pose[5]);
  const Vec3 local = rot.transpose() * (p - pose.head<3>());
  SurfaceQuery q = std::visit(
      [&local](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Box>) {
          return detail::box_sdf(local, 0.5 * s.dims);
        } else {
          return detail::cylinder_sdf(local, s.radius, 0.5 * s.height);
        }
      },
      shape);
  q.normal = rot * q.normal;
  return q;
}

struct SceneObject {
  Shape shape = Box{};
  Vec6 true_pose = Vec6::Zero();
  Vec6 believed_pose = Vec6::Zero();
  double diaphragm_scale = kDefaultDiaphragmScale;
  bool diaphragm_override = false;
  int max_fingers = kFingertips;
};

struct Workspace {
  Vec3 min = Vec3(-1.0, -1.0, 0.0);
  Vec3 max = Vec3(1.0, 1.0, 1.0);

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

struct Scene {
  SceneObject object;
  double table_height = 0.0;
  Workspace workspace;

  void validate() const {
    const auto& o = object;
    if (!o.true_pose.allFinite() || !o.believed_pose.allFinite()) {
      throw InvariantError("Scene", "object poses must be finite");
    }
    if (!o.diaphragm_override && std::abs(o.diaphragm_scale - kDefaultDiaphragmScale) > 1e-12) {
      throw InvariantError("Scene", "diaphragm_scale must be 1.2 unless explicitly overridden");
    }
    if (!(o.diaphragm_scale > 1.0)) {
      throw InvariantError("Scene", "diaphragm must be larger than the object");
    }
    if (o.max_fingers < 1 || o.max_fingers > kFingertips) {
      throw InvariantError("Scene", "max_fingers must lie in [1, 5]");
    }
    if ((o.true_pose.tail<3>() - o.believed_pose.tail<3>()).cwiseAbs().maxCoeff() > 1e-12 ||
        std::abs(o.true_pose[2] - o.believed_pose[2]) > 1e-12) {
      throw InvariantError("Scene", "true and believed pose may differ only in the table plane");
    }
    const bool valid_shape = std::visit(
        [](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) {
            return (s.dims.array() > 0.0).all();
          } else {
            return s.radius > 0.0 && s.height > 0.0;
          }
        },
        o.shape);
    if (!valid_shape) throw InvariantError("Scene", "object dimensions must be positive");
    if (o.true_pose[2] - half_height(o.shape) < table_height - 1e-9) {
      throw InvariantError("Scene", "object must rest above the table");
    }
    if (!(workspace.max.array() > workspace.min.array()).all()) {
      throw InvariantError("Scene", "workspace bounds are empty");
    }
    if (!workspace.contains(o.true_pose.head<3>()) || !workspace.contains(o.believed_pose.head<3>())) {
      throw InvariantError("Scene", "object must lie inside the workspace");
    }
  }
};

/// Five fingertips rigidly attached to the wrist. Index 0 is the thumb.
struct EndEffector {
  std::vector<Vec3> fingertip_offsets;
  /// Cartesian speed limit of the avatar arm's wrist [m/s]; 0 disables it.
  double max_wrist_speed = 0.0;

  void validate() const {
    if (fingertip_offsets.size() != static_cast<std::size_t>(kFingertips)) {
      throw InvariantError("EndEffector", "exactly 5 fingertip offsets are required");
    }
    for (const auto& o : fingertip_offsets) {
      if (!o.allFinite() || o.norm() > 0.15) {
        throw InvariantError("EndEffector", "fingertip offsets must lie within 0.15 m of the wrist");
      }
    }
    if (!(max_wrist_speed >= 0.0)) {
      throw InvariantError("EndEffector", "max_wrist_speed must be non-negative");
    }
  }

  std::array<Vec3, kFingertips> fingertips(const Vec6& wrist) const {
    const Mat3 rot = rpy_to_rotation(wrist[3], wrist[4], wrist[5]);
    std::array<Vec3, kFingertips> out;
    for (int i = 0; i < kFingertips; ++i) out[i] = wrist.head<3>() + rot * fingertip_offsets[i];
    return out;
  }
};

/// Thumb opposing four fingers across the hand's y axis; fingers point down.
/// The arm's wrist speed is capped at 0.27 m/s.
inline EndEffector default_hand() {
  EndEffector h;
  h.fingertip_offsets = {Vec3(0.0, -0.008, -0.10), Vec3(-0.0045, 0.008, -0.10), Vec3(-0.0015, 0.008, -0.10),
                         Vec3(0.0015, 0.008, -0.10), Vec3(0.0045, 0.008, -0.10)};
  h.max_wrist_speed = 0.27;
  return h;
}

struct ContactEvent {
  double t = 0.0;
  int finger = 0;
  double depth = 0.0;  // penetration below the true surface, >= 0
  Vec3 normal = Vec3::UnitZ();
};

struct ContactLog {
  std::vector<ContactEvent> events;

  bool empty() const noexcept { return events.empty(); }

  void write_csv(std::ostream& os) const {
    os << "# schema: mmt.contacts.v1\n";
    os << "t,finger,depth,nx,ny,nz\n";
    for (const auto& e : events) {
      os << e.t << ',' << e.finger << ',' << e.depth << ',' << e.normal.x() << ',' << e.normal.y() << ','
         << e.normal.z() << '\n';
    }
  }
};

struct Execution {
  ContactLog contacts;
  bool truncated = false;          // the wrist left the workspace or a fingertip hit the table
  std::size_t executed_steps = 0;  // samples actually executed
  std::vector<Vec6> realized;      // wrist poses after the arm's speed limit
};

/// Plays `traj` on the avatar hand. Each step, every fingertip inside the
/// diaphragm of the true object yields an event against the true surface.
inline Execution execute(const Trajectory& traj, const Scene& scene, const EndEffector& hand) {
  const auto& obj = scene.object;
  const Shape shell = scaled(obj.shape, obj.diaphragm_scale);
  Execution out;
  out.realized.reserve(traj.size());
  Vec6 wrist = traj.front().pose;
  const double max_step = hand.max_wrist_speed * traj.dt();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto& smp = traj[k];
    if (k > 0) {
      Vec3 step = smp.pose.head<3>() - wrist.head<3>();
      const double len = step.norm();
      if (hand.max_wrist_speed > 0.0 && len > max_step) step *= max_step / len;
      wrist.head<3>() += step;
    }
    wrist.tail<3>() = smp.pose.tail<3>();

    const auto tips = hand.fingertips(wrist);
    bool blocked = !scene.workspace.contains(wrist.head<3>());
    for (const auto& tip : tips) blocked = blocked || tip.z() < scene.table_height;
    if (blocked) {
      out.truncated = true;
      break;
    }
    out.realized.push_back(wrist);
    ++out.executed_steps;
    for (int f = 0; f < kFingertips; ++f) {
      if (point_surface_distance(tips[f], shell, obj.true_pose).distance > 0.0) continue;
      const SurfaceQuery surf = point_surface_distance(tips[f], obj.shape, obj.true_pose);
      out.contacts.events.push_back({smp.t, f, std::max(0.0, -surf.distance), surf.normal});
    }
  }
  return out;
}

inline std::set<int> fingers_in_window(const ContactLog& log, double window_start) {
  std::set<int> fingers;
  for (const auto& e : log.events) {
    if (e.t >= window_start - 1e-12) fingers.insert(e.finger);
  }
  return fingers;
}

struct GraspCriteria {
  double window_fraction = 0.2;
  int min_fingers = 2;
  double opposition_deg = 90.0;

  double window_start(double episode_duration) const { return (1.0 - window_fraction) * episode_duration; }
};

struct GraspOutcome {
  bool success = false;
  int n_fingers = 0;
};

/// Largest angle between contact normals inside the window [deg].
inline double opposition_angle(const ContactLog& log, double window_start) {
  std::vector<Vec3> normals;
  for (const auto& e : log.events) {
    if (e.t < window_start - 1e-12) continue;
    const bool seen = std::any_of(normals.begin(), normals.end(),
                                  [&e](const Vec3& n) { return (n - e.normal).norm() < 1e-9; });
    if (!seen) normals.push_back(e.normal);
  }
  double best = 0.0;
  for (std::size_t i = 0; i < normals.size(); ++i) {
    for (std::size_t j = i + 1; j < normals.size(); ++j) {
      const double c = std::clamp(normals[i].dot(normals[j]), -1.0, 1.0);
      best = std::max(best, std::acos(c) * 180.0 / std::numbers::pi);
    }
  }
  return best;
}

/// Grasp succeeds with at least `min_fingers` distinct fingers touching during the
/// final window and contact normals opposing by more than `opposition_deg`.
inline GraspOutcome grasp_success(const ContactLog& log, const Scene& scene, double episode_duration,
                                  const GraspCriteria& criteria = {}) {
  const double start = criteria.window_start(episode_duration);
  GraspOutcome out;
  out.n_fingers = std::min(static_cast<int>(fingers_in_window(log, start).size()), scene.object.max_fingers);
  out.success = out.n_fingers >= criteria.min_fingers && opposition_angle(log, start) > criteria.opposition_deg;
  return out;
}

/// Offsets the true object position by `magnitude` along a uniformly random
/// direction in the table plane. The believed pose is left stale.
template <class Rng>
Scene inject_uncertainty(const Scene& scene, double magnitude, Rng& rng) {
  if (!(magnitude >= 0.0)) throw std::invalid_argument("inject_uncertainty: magnitude must be >= 0");
  Scene out = scene;
  if (magnitude == 0.0) {
    out.object.true_pose = out.object.believed_pose;
    return out;
  }
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double a = angle(rng);
    Vec6 pose = scene.object.believed_pose;
    pose[0] += magnitude * std::cos(a);
    pose[1] += magnitude * std::sin(a);
    if (scene.workspace.contains(pose.head<3>())) {
      out.object.true_pose = pose;
      return out;
    }
  }
  throw std::runtime_error("inject_uncertainty: no in-workspace offset found after 100 attempts");
}

}  // namespace mmt
