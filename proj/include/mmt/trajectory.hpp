#pragma once

#include "mmt/core.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace mmt {

struct TrajectorySample {
  double t = 0.0;
  Vec6 pose = Vec6::Zero();  // x, y, z [m]; roll, pitch, yaw [rad]
  Vec6 velocity = Vec6::Zero();
  Vec6 acceleration = Vec6::Zero();
};

/// Uniformly sampled 6-DOF end-effector trajectory.
class Trajectory {
 public:
  Trajectory(std::vector<TrajectorySample> samples, double dt)
      : samples_(std::move(samples)), dt_(dt) {
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) {
      throw InvariantError("Trajectory", "dt must be positive and finite");
    }
    if (samples_.size() < 3) {
      throw InvariantError("Trajectory", "at least 3 samples are required");
    }
    const double t0 = samples_.front().t;
    for (std::size_t k = 0; k < samples_.size(); ++k) {
      const auto& s = samples_[k];
      const double expected = t0 + static_cast<double>(k) * dt_;
      if (std::abs(s.t - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
        throw InvariantError("Trajectory", "samples must be uniformly spaced by dt");
      }
      if (!s.pose.allFinite() || !s.velocity.allFinite() || !s.acceleration.allFinite()) {
        throw InvariantError("Trajectory", "non-finite sample");
      }
    }
  }

  /// Builds a trajectory from positions alone; derivatives by finite differences
  /// (central in the interior, second-order one-sided velocity at the ends).
  static Trajectory from_positions(std::span<const Vec6> poses, double dt, double t0 = 0.0) {
    const std::size_t n = poses.size();
    if (n < 3) {
      throw InvariantError("Trajectory", "at least 3 samples are required");
    }
    if (!(dt > 0.0)) {
      throw InvariantError("Trajectory", "dt must be positive and finite");
    }
    std::vector<TrajectorySample> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      out[k].t = t0 + static_cast<double>(k) * dt;
      out[k].pose = poses[k];
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
      out[k].velocity = (poses[k + 1] - poses[k - 1]) / (2.0 * dt);
      out[k].acceleration = (poses[k + 1] - 2.0 * poses[k] + poses[k - 1]) / (dt * dt);
    }
    out[0].velocity = (-3.0 * poses[0] + 4.0 * poses[1] - poses[2]) / (2.0 * dt);
    out[n - 1].velocity = (3.0 * poses[n - 1] - 4.0 * poses[n - 2] + poses[n - 3]) / (2.0 * dt);
    out[0].acceleration = out[1].acceleration;
    out[n - 1].acceleration = out[n - 2].acceleration;
    return Trajectory(std::move(out), dt);
  }

  const std::vector<TrajectorySample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  double dt() const noexcept { return dt_; }
  double start_time() const noexcept { return samples_.front().t; }
  double end_time() const noexcept { return samples_.back().t; }
  double duration() const noexcept { return end_time() - start_time(); }
  const TrajectorySample& front() const noexcept { return samples_.front(); }
  const TrajectorySample& back() const noexcept { return samples_.back(); }
  const TrajectorySample& operator[](std::size_t k) const noexcept { return samples_[k]; }

  std::vector<double> dimension(int d) const {
    std::vector<double> v;
    v.reserve(samples_.size());
    for (const auto& s : samples_) v.push_back(s.pose[d]);
    return v;
  }

 private:
  std::vector<TrajectorySample> samples_;
  double dt_;
};

/// Root-mean-square of the positional (xyz) error over common samples.
inline double position_rmse(const Trajectory& a, const Trajectory& b) {
  const std::size_t n = std::min(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    acc += (a[k].pose.head<3>() - b[k].pose.head<3>()).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(n));
}

/// Per-dimension RMSE over common samples.
inline double dimension_rmse(const Trajectory& a, const Trajectory& b, int d) {
  const std::size_t n = std::min(a.size(), b.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = a[k].pose[d] - b[k].pose[d];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

/// Quintic minimum-jerk profile from `from` to `to` over `duration`, sampled at dt.
inline Trajectory minimum_jerk(const Vec6& from, const Vec6& to, double duration, double dt) {
  if (!(duration > 0.0) || !(dt > 0.0)) {
    throw InvariantError("Trajectory", "minimum-jerk duration and dt must be positive");
  }
  const auto steps = static_cast<std::size_t>(std::llround(duration / dt));
  std::vector<TrajectorySample> out(steps + 1);
  const Vec6 delta = to - from;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double u = std::min(t / duration, 1.0);
    const double u2 = u * u, u3 = u2 * u, u4 = u3 * u, u5 = u4 * u;
    const double p = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    const double dp = (30.0 * u2 - 60.0 * u3 + 30.0 * u4) / duration;
    const double ddp = (60.0 * u - 180.0 * u2 + 120.0 * u3) / (duration * duration);
    out[k].t = t;
    out[k].pose = from + p * delta;
    out[k].velocity = dp * delta;
    out[k].acceleration = ddp * delta;
  }
  out.back().pose = to;
  return Trajectory(std::move(out), dt);
}

}  // namespace mmt
