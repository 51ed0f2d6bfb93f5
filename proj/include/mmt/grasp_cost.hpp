#pragma once

// Roll-out cost built only from signals the real avatar has: end-effector
// acceleration, the policy parameters, and which fingers touched the object.
//
//   J = Phi + sum_t 1e-11 * (|a_t|^2 + 0.5 * theta^T R theta) * dt,  R = R_scale * I
//   Phi = 1 - n_fingers / max_fingers

#include "mmt/avatar_sim.hpp"
#include "mmt/trajectory.hpp"

#include <numeric>
#include <vector>

namespace mmt {

inline constexpr double kCostWeight = 1e-11;

struct CostConfig {
  double R_scale = 1.0;
  int max_fingers = kFingertips;
  double window_fraction = 0.2;
};

struct CostBreakdown {
  double accel_term = 0.0;
  double control_term = 0.0;
  double terminal = 0.0;
  double total = 0.0;
  int n_fingers = 0;
  std::vector<double> step_costs;
};

inline double step_cost(const Vec6& accel, const Eigen::Ref<const Eigen::VectorXd>& theta, double R_scale,
                        double dt) {
  return kCostWeight * (accel.squaredNorm() + 0.5 * R_scale * theta.squaredNorm()) * dt;
}

inline double terminal_cost(int n_fingers, int max_fingers = kFingertips) {
  if (n_fingers < 0 || n_fingers > max_fingers || max_fingers < 1 || max_fingers > kFingertips) {
    throw std::invalid_argument("terminal_cost: finger count out of range");
  }
  // (max - n) / max rather than 1 - n / max: exact on the 0.2 grid.
  return static_cast<double>(max_fingers - n_fingers) / static_cast<double>(max_fingers);
}

/// Riemann sum of step costs plus the terminal grasp-quality cost. The window is
/// the final `window_fraction` of `episode_duration`, measured from t = 0.
inline CostBreakdown rollout_cost(const Trajectory& traj, const Eigen::Ref<const Eigen::VectorXd>& theta,
                                  const ContactLog& contacts, double episode_duration,
                                  const CostConfig& config = {}) {
  CostBreakdown out;
  out.step_costs.reserve(traj.size());
  const double control = kCostWeight * 0.5 * config.R_scale * theta.squaredNorm() * traj.dt();
  for (const auto& s : traj.samples()) {
    const double accel = kCostWeight * s.acceleration.squaredNorm() * traj.dt();
    out.accel_term += accel;
    out.control_term += control;
    out.step_costs.push_back(accel + control);
  }
  const double window_start = (1.0 - config.window_fraction) * episode_duration;
  out.n_fingers = std::min(static_cast<int>(fingers_in_window(contacts, window_start).size()), config.max_fingers);
  out.terminal = terminal_cost(out.n_fingers, config.max_fingers);
  out.total = out.terminal + out.accel_term + out.control_term;
  return out;
}

}  // namespace mmt
