#pragma once

// Discrete dynamic movement primitives, one per pose dimension.
//
//   tau * dz/dt = alpha_z * (beta_z * (g - x) - z) + f(s)
//   tau * dx/dt = z
//   tau * ds/dt = -alpha_x * s
//   f(s) = (sum_i w_i psi_i(s) / sum_i psi_i(s)) * s * (g - x0)
//
// A dimension whose demonstrated start equals its goal is "degenerate": its
// forcing term is scaled by s alone so the learned shape survives. The
// demonstrated start velocity seeds z(0), scaled with the start-goal span.

#include "mmt/core.hpp"
#include "mmt/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace mmt {

inline constexpr int kDmpFormatVersion = 1;
inline constexpr double kDegenerateSpan = 1e-9;

struct DmpGains {
  double alpha_z = 25.0;
  double beta_z = 25.0 / 4.0;
  double alpha_x = 25.0 / 3.0;

  static DmpGains critically_damped(double alpha_z) { return {alpha_z, alpha_z / 4.0, alpha_z / 3.0}; }

  /// Equilibrium stiffness; converts forcing units to a goal-shift in pose units.
  double stiffness() const noexcept { return alpha_z * beta_z; }
};

struct DmpDimension {
  Eigen::VectorXd weights;
  double start = 0.0;
  double goal = 0.0;
  double start_velocity = 0.0;  // demonstrated dx/dt at t = 0

  bool degenerate() const noexcept { return std::abs(goal - start) < kDegenerateSpan; }
};

struct DmpParams {
  std::array<DmpDimension, kPoseDims> dims;
  double duration = 1.0;
  int n_basis = 20;
  DmpGains gains;

  void validate() const {
    if (n_basis < 2) throw InvariantError("DmpParams", "n_basis must be >= 2");
    if (!(duration > 0.0) || !std::isfinite(duration)) {
      throw InvariantError("DmpParams", "duration must be positive and finite");
    }
    if (!(gains.alpha_z > 0.0) || !(gains.beta_z > 0.0) || !(gains.alpha_x > 0.0)) {
      throw InvariantError("DmpParams", "gains must be positive");
    }
    if (std::abs(gains.beta_z - gains.alpha_z / 4.0) > 1e-12 * gains.alpha_z) {
      throw InvariantError("DmpParams", "beta_z must equal alpha_z / 4");
    }
    for (const auto& d : dims) {
      if (d.weights.size() != n_basis) {
        throw InvariantError("DmpParams", "every dimension must carry n_basis weights");
      }
      if (!d.weights.allFinite() || !std::isfinite(d.start) || !std::isfinite(d.goal) ||
          !std::isfinite(d.start_velocity)) {
        throw InvariantError("DmpParams", "non-finite dimension record");
      }
    }
  }

  Vec6 start() const {
    Vec6 v;
    for (int d = 0; d < kPoseDims; ++d) v[d] = dims[d].start;
    return v;
  }
  Vec6 goal() const {
    Vec6 v;
    for (int d = 0; d < kPoseDims; ++d) v[d] = dims[d].goal;
    return v;
  }
};

/// Gaussian kernels on the canonical phase. Centers follow the exponential phase
/// decay (equally spaced in time); adjacent kernels cross at activation 0.5.
class BasisFunctions {
 public:
  BasisFunctions(int n_basis, double alpha_x) : centers_(n_basis), widths_(n_basis) {
    if (n_basis < 2) throw InvariantError("DmpParams", "n_basis must be >= 2");
    for (int i = 0; i < n_basis; ++i) {
      centers_[i] = std::exp(-alpha_x * static_cast<double>(i) / static_cast<double>(n_basis - 1));
    }
    for (int i = 0; i + 1 < n_basis; ++i) {
      const double half_gap = 0.5 * std::abs(centers_[i] - centers_[i + 1]);
      widths_[i] = std::log(2.0) / (half_gap * half_gap);
    }
    widths_[n_basis - 1] = widths_[n_basis - 2];
  }

  int size() const noexcept { return static_cast<int>(centers_.size()); }
  const Eigen::VectorXd& centers() const noexcept { return centers_; }
  const Eigen::VectorXd& widths() const noexcept { return widths_; }

  Eigen::VectorXd activations(double s) const {
    return (-widths_.array() * (s - centers_.array()).square()).exp().matrix();
  }

  /// psi_i(s) / sum_j psi_j(s).
  Eigen::VectorXd normalized(double s) const {
    Eigen::VectorXd a = activations(s);
    const double total = a.sum();
    if (total > 0.0) return a / total;
    Eigen::VectorXd nearest = Eigen::VectorXd::Zero(size());
    Eigen::Index idx = 0;
    (s - centers_.array()).abs().minCoeff(&idx);
    nearest[idx] = 1.0;
    return nearest;
  }

 private:
  Eigen::VectorXd centers_;
  Eigen::VectorXd widths_;
};

inline double phase_at(double t, double duration, const DmpGains& gains) {
  return std::exp(-gains.alpha_x * t / duration);
}

/// Multiplier of the normalized basis output in dimension `d`.
inline double forcing_scale(const DmpDimension& encoded, double start, double goal, double s) {
  return encoded.degenerate() ? s : s * (goal - start);
}

/// One-shot learning of DMP weights by locally weighted regression of the
/// forcing term against the basis activations.
inline DmpParams encode_demonstration(const Trajectory& demo, int n_basis = 20,
                                      DmpGains gains = DmpGains{}) {
  if (n_basis < 2) throw InvariantError("DmpParams", "n_basis must be >= 2");
  gains.beta_z = gains.alpha_z / 4.0;
  DmpParams params;
  params.n_basis = n_basis;
  params.gains = gains;
  params.duration = demo.duration();
  const double tau = params.duration;
  const BasisFunctions basis(n_basis, gains.alpha_x);
  const double t0 = demo.start_time();

  const std::size_t n = demo.size();
  Eigen::MatrixXd psi(static_cast<Eigen::Index>(n), n_basis);
  Eigen::VectorXd phase(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    phase[static_cast<Eigen::Index>(k)] = phase_at(demo[k].t - t0, tau, gains);
    psi.row(static_cast<Eigen::Index>(k)) = basis.activations(phase[static_cast<Eigen::Index>(k)]).transpose();
  }

  for (int d = 0; d < kPoseDims; ++d) {
    DmpDimension& dim = params.dims[d];
    dim.start = demo.front().pose[d];
    dim.goal = demo.back().pose[d];
    dim.start_velocity = demo.front().velocity[d];
    dim.weights = Eigen::VectorXd::Zero(n_basis);

    Eigen::VectorXd target(static_cast<Eigen::Index>(n));
    Eigen::VectorXd xi(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      const auto& smp = demo[k];
      const auto kk = static_cast<Eigen::Index>(k);
      target[kk] = tau * tau * smp.acceleration[d] -
                   gains.alpha_z * (gains.beta_z * (dim.goal - smp.pose[d]) - tau * smp.velocity[d]);
      xi[kk] = forcing_scale(dim, dim.start, dim.goal, phase[kk]);
    }
    for (int i = 0; i < n_basis; ++i) {
      const double num = (psi.col(i).array() * xi.array() * target.array()).sum();
      const double den = (psi.col(i).array() * xi.array().square()).sum();
      dim.weights[i] = den > 1e-300 ? num / den : 0.0;
    }
  }
  return params;
}

/// Integrates all six transformation systems with explicit Euler.
///
/// `action_noise`, when given, holds one row per integration step (6 columns) of
/// perturbations added to the forcing output, expressed as equilibrium shifts in
/// pose units (forcing / stiffness).
inline Trajectory integrate_dmp(const DmpParams& params, const Vec6& start, const Vec6& goal,
                                double dt, double horizon,
                                const Eigen::MatrixXd* action_noise = nullptr) {
  const double tau = params.duration;
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  if (action_noise != nullptr &&
      (action_noise->rows() < static_cast<Eigen::Index>(steps + 1) || action_noise->cols() != kPoseDims)) {
    throw std::invalid_argument("integrate_dmp: action noise must have steps+1 rows and 6 columns");
  }
  const BasisFunctions basis(params.n_basis, params.gains.alpha_x);
  const DmpGains& g = params.gains;

  std::vector<TrajectorySample> out(steps + 1);
  Vec6 x = start;
  Vec6 z;
  for (int d = 0; d < kPoseDims; ++d) {
    const auto& enc = params.dims[d];
    const double span = enc.degenerate() ? 1.0 : (goal[d] - start[d]) / (enc.goal - enc.start);
    z[d] = tau * enc.start_velocity * span;
  }
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double s = phase_at(t, tau, g);
    const Eigen::VectorXd nb = basis.normalized(s);
    Vec6 zdot;
    for (int d = 0; d < kPoseDims; ++d) {
      const auto& enc = params.dims[d];
      double f = nb.dot(enc.weights) * forcing_scale(enc, start[d], goal[d], s);
      if (action_noise != nullptr) f += g.stiffness() * (*action_noise)(static_cast<Eigen::Index>(k), d);
      zdot[d] = (g.alpha_z * (g.beta_z * (goal[d] - x[d]) - z[d]) + f) / tau;
    }
    out[k].t = t;
    out[k].pose = x;
    out[k].velocity = z / tau;
    out[k].acceleration = zdot / tau;
    if (k < steps) {
      const Vec6 xdot = z / tau;
      x += dt * xdot;
      z += dt * zdot;
    }
  }
  return Trajectory(std::move(out), dt);
}

/// Rebuilds a trajectory for a new start and goal over `horizon_factor` times the
/// encoded duration.
inline Trajectory reconstruct(const DmpParams& params, const Vec6& new_start, const Vec6& new_goal,
                              double dt, double horizon_factor = 1.0) {
  if (!new_start.allFinite() || !new_goal.allFinite() || !std::isfinite(dt) ||
      !std::isfinite(horizon_factor)) {
    throw std::invalid_argument("reconstruct: non-finite start, goal or dt");
  }
  params.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("reconstruct: dt must be positive");
  if (dt > params.duration / 10.0 + 1e-12) {
    throw std::invalid_argument("reconstruct: dt must not exceed duration / 10");
  }
  if (!(horizon_factor > 0.0)) throw std::invalid_argument("reconstruct: horizon factor must be positive");
  return integrate_dmp(params, new_start, new_goal, dt, horizon_factor * params.duration);
}

/// d(action_d)/d(w_{d,i}) at time t, in the action units used by integrate_dmp.
inline Eigen::VectorXd action_basis_row(const DmpParams& params, const BasisFunctions& basis,
                                        int d, double start, double goal, double t) {
  const double s = phase_at(t, params.duration, params.gains);
  return basis.normalized(s) * (forcing_scale(params.dims[d], start, goal, s) / params.gains.stiffness());
}

inline nlohmann::json to_json(const DmpParams& p) {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : p.dims) {
    dims.push_back({{"weights", std::vector<double>(d.weights.data(), d.weights.data() + d.weights.size())},
                    {"start", d.start},
                    {"goal", d.goal},
                    {"start_velocity", d.start_velocity}});
  }
  return {{"version", kDmpFormatVersion},
          {"duration", p.duration},
          {"n_basis", p.n_basis},
          {"gains", {{"alpha_z", p.gains.alpha_z}, {"beta_z", p.gains.beta_z}, {"alpha_x", p.gains.alpha_x}}},
          {"dims", dims}};
}

inline DmpParams dmp_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvariantError("DmpParams", "payload must be a JSON object");
  if (j.value("version", -1) != kDmpFormatVersion) {
    throw InvariantError("DmpParams", "unsupported payload version");
  }
  DmpParams p;
  p.duration = j.at("duration").get<double>();
  p.n_basis = j.at("n_basis").get<int>();
  const auto& gains = j.at("gains");
  p.gains = {gains.at("alpha_z").get<double>(), gains.at("beta_z").get<double>(),
             gains.at("alpha_x").get<double>()};
  const auto& dims = j.at("dims");
  if (!dims.is_array() || dims.size() != kPoseDims) {
    throw InvariantError("DmpParams", "exactly 6 dimension records are required");
  }
  for (int d = 0; d < kPoseDims; ++d) {
    const auto w = dims[d].at("weights").get<std::vector<double>>();
    p.dims[d].weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    p.dims[d].start = dims[d].at("start").get<double>();
    p.dims[d].goal = dims[d].at("goal").get<double>();
    p.dims[d].start_velocity = dims[d].value("start_velocity", 0.0);
  }
  p.validate();
  return p;
}

}  // namespace mmt
