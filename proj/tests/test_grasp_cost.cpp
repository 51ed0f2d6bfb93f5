#include "mmt/grasp_cost.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace mmt;

namespace {

Trajectory stationary(std::size_t n, double dt) {
  std::vector<Vec6> poses(n, make_vec6(0.3, 0.0, 0.2, 0, 0, 0));
  return Trajectory::from_positions(poses, dt);
}

ContactLog full_grasp(double t) {
  ContactLog log;
  log.events.push_back({t, 0, 0.001, Vec3(0, -1, 0)});
  for (int f = 1; f < 5; ++f) log.events.push_back({t, f, 0.001, Vec3(0, 1, 0)});
  return log;
}

}  // namespace

TEST(TerminalCost, Table) {
  const double expected[] = {1.0, 0.8, 0.6, 0.4, 0.2, 0.0};
  for (int n = 0; n <= 5; ++n) EXPECT_EQ(terminal_cost(n), expected[n]) << n;
  EXPECT_EQ(terminal_cost(5), 0.0);
  EXPECT_EQ(terminal_cost(0), 1.0);
}

TEST(TerminalCost, RejectsOutOfRange) {
  EXPECT_THROW(terminal_cost(6), std::invalid_argument);
  EXPECT_THROW(terminal_cost(-1), std::invalid_argument);
  EXPECT_DOUBLE_EQ(terminal_cost(2, 2), 0.0);
  EXPECT_DOUBLE_EQ(terminal_cost(1, 2), 0.5);
}

TEST(StepCost, Examples) {
  EXPECT_EQ(step_cost(Vec6::Zero(), Eigen::VectorXd::Zero(4), 1.0, 0.01), 0.0);
  Vec6 a = Vec6::Zero();
  a[0] = std::sqrt(1e11);
  EXPECT_NEAR(step_cost(a, Eigen::VectorXd::Zero(4), 1.0, 1.0), 1.0, 1e-12);
  EXPECT_NEAR(step_cost(Vec6::Zero(), Eigen::VectorXd::Constant(1, 2.0), 3.0, 0.5), 1e-11 * 0.5 * 3 * 4 * 0.5, 1e-25);
}

TEST(StepCost, ConstantAccelerationRiemannSum) {
  Vec6 a = Vec6::Constant(1e5);
  const double dt = 0.01;
  const int n = 300;
  double sum = 0;
  for (int k = 0; k < n; ++k) sum += step_cost(a, Eigen::VectorXd::Zero(1), 1.0, dt);
  EXPECT_NEAR(sum, 1e-11 * a.squaredNorm() * n * dt, 1e-12);
}

TEST(RolloutCost, StationaryWithoutContactsCostsOne) {
  const auto traj = stationary(301, 0.01);
  const auto c = rollout_cost(traj, Eigen::VectorXd::Zero(120), ContactLog{}, 3.0);
  EXPECT_DOUBLE_EQ(c.total, 1.0);
  EXPECT_EQ(c.n_fingers, 0);
}

TEST(RolloutCost, FullGraspAtRestIsFree) {
  const auto traj = stationary(301, 0.01);
  const auto c = rollout_cost(traj, Eigen::VectorXd::Zero(120), full_grasp(2.9), 3.0);
  EXPECT_EQ(c.total, 0.0);
  EXPECT_EQ(c.n_fingers, 5);
}

TEST(RolloutCost, EarlyContactsIgnored) {
  const auto traj = stationary(301, 0.01);
  const auto c = rollout_cost(traj, Eigen::VectorXd::Zero(120), full_grasp(1.0), 3.0);
  EXPECT_EQ(c.terminal, 1.0);
}

TEST(RolloutCost, MatchesBruteForceSum) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int ep = 0; ep < 100; ++ep) {
    const double dt = 0.005 + 0.02 * u(rng);
    const int steps = 20 + static_cast<int>(200 * u(rng));
    std::vector<Vec6> poses(steps);
    for (auto& p : poses) {
      for (int d = 0; d < 6; ++d) p[d] = 0.05 * n(rng);
    }
    const auto traj = Trajectory::from_positions(poses, dt);
    Eigen::VectorXd theta(30);
    for (int i = 0; i < 30; ++i) theta[i] = 100 * n(rng);
    const double duration = traj.duration();
    ContactLog log;
    const int n_events = static_cast<int>(12 * u(rng));
    for (int e = 0; e < n_events; ++e) {
      log.events.push_back({duration * u(rng), static_cast<int>(5 * u(rng)) % 5, 0.0, Vec3::UnitZ()});
    }
    std::sort(log.events.begin(), log.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
    const double r_scale = 0.5 + u(rng);

    // Naive oracle.
    double integral = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
      double a2 = 0.0;
      for (int d = 0; d < 6; ++d) a2 += traj[k].acceleration[d] * traj[k].acceleration[d];
      double th2 = 0.0;
      for (int i = 0; i < 30; ++i) th2 += theta[i] * theta[i];
      integral += 1e-11 * (a2 + 0.5 * r_scale * th2) * dt;
    }
    std::set<int> fingers;
    for (const auto& e : log.events) {
      if (e.t >= 0.8 * duration) fingers.insert(e.finger);
    }
    const double oracle = 1.0 - fingers.size() / 5.0 + integral;

    CostConfig cfg;
    cfg.R_scale = r_scale;
    const auto c = rollout_cost(traj, theta, log, duration, cfg);
    ASSERT_NEAR(c.total, oracle, 1e-9);
    ASSERT_EQ(c.n_fingers, static_cast<int>(fingers.size()));
    ASSERT_NEAR(c.total, c.terminal + c.accel_term + c.control_term, 1e-12);
    ASSERT_EQ(c.step_costs.size(), traj.size());
    ASSERT_GE(c.accel_term, 0.0);
    ASSERT_GE(c.control_term, 0.0);
  }
}

TEST(RolloutCost, DoublingRScaleDoublesControlTerm) {
  std::vector<Vec6> poses;
  for (int k = 0; k < 50; ++k) poses.push_back(make_vec6(0.001 * k * k, 0, 0, 0, 0, 0));
  const auto traj = Trajectory::from_positions(poses, 0.01);
  const Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(24, -50, 50);
  CostConfig a, b;
  b.R_scale = 2.0 * a.R_scale;
  const auto ca = rollout_cost(traj, theta, {}, traj.duration(), a);
  const auto cb = rollout_cost(traj, theta, {}, traj.duration(), b);
  EXPECT_EQ(cb.control_term, 2.0 * ca.control_term);
  EXPECT_EQ(cb.accel_term, ca.accel_term);
}

TEST(RolloutCost, FingerCountAgreesWithGraspTest) {
  const auto traj = stationary(301, 0.01);
  ContactLog log = full_grasp(2.5);
  log.events.pop_back();
  Scene scene;
  const auto g = grasp_success(log, scene, 3.0);
  const auto c = rollout_cost(traj, Eigen::VectorXd::Zero(6), log, 3.0);
  EXPECT_EQ(g.n_fingers, c.n_fingers);
  EXPECT_EQ(c.n_fingers, 4);
  EXPECT_NEAR(c.terminal, 0.2, 1e-15);
}

TEST(RolloutCost, ObjectFingerLimit) {
  const auto traj = stationary(301, 0.01);
  CostConfig cfg;
  cfg.max_fingers = 3;
  const auto c = rollout_cost(traj, Eigen::VectorXd::Zero(6), full_grasp(2.9), 3.0, cfg);
  EXPECT_EQ(c.n_fingers, 3);
  EXPECT_EQ(c.terminal, 0.0);
}
