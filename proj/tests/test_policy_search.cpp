#include "mmt/policy_search.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

using namespace mmt;

namespace {

// J(theta) = |theta - target|^2; eNAC actions are theta plus the first row of noise.
struct Quadratic {
  Eigen::VectorXd target;
  double success_below = -1.0;

  Evaluation evaluate(const Eigen::VectorXd& theta, const Vec6&, const Eigen::MatrixXd* noise) const {
    Eigen::VectorXd a = theta;
    if (noise != nullptr) a += noise->row(0).head(theta.size()).transpose();
    Evaluation e;
    e.terminal_cost = (a - target).squaredNorm();
    e.success = e.terminal_cost < success_below;
    return e;
  }
  Eigen::Index action_steps() const { return 1; }
  Eigen::VectorXd score(const Rollout& r, const Eigen::VectorXd& theta, const Vec6&) const {
    Eigen::VectorXd s = r.theta - theta;
    if (r.action_noise.size() > 0) s += r.action_noise.row(0).head(theta.size()).transpose();
    return s;
  }
};

static_assert(LearningProblem<Quadratic>);

Policy start_policy(int n) {
  Policy p;
  p.theta = Eigen::VectorXd::Zero(n);
  return p;
}

Quadratic toy(int n) {
  Quadratic q;
  q.target = Eigen::VectorXd::LinSpaced(n, 1.0, 3.0);
  return q;
}

Rollout with_cost(double cost, Eigen::VectorXd eps) {
  Rollout r;
  r.theta = eps;
  r.epsilon = eps;
  r.terminal_cost = cost;
  r.total_cost = cost;
  return r;
}

}  // namespace

TEST(Exploration, DecayFactorExamples) {
  EXPECT_EQ(decay_factor(0, 100), 1.0);
  EXPECT_EQ(decay_factor(50, 100), 0.5);
  EXPECT_EQ(decay_factor(95, 100), 0.1);
  double prev = 1.0;
  for (int i = 0; i <= 300; ++i) {
    const double g = decay_factor(i, 100);
    EXPECT_LE(g, prev);
    EXPECT_GE(g, 0.1);
    EXPECT_LE(g, 1.0);
    prev = g;
  }
}

TEST(Exploration, ScaledSigmaExamples) {
  ExplorationSchedule s;
  s.sigma_init = 300;
  EXPECT_EQ(scaled_sigma(s, 0), 300.0);
  EXPECT_DOUBLE_EQ(scaled_sigma(s, 100), 30.0);
  s.sigma_init = 0.01;
  EXPECT_DOUBLE_EQ(scaled_sigma(s, 50), 0.005);
}

TEST(Exploration, ScheduleValidation) {
  ExplorationSchedule s;
  s.update_max = 0;
  EXPECT_THROW(s.validate(), InvariantError);
  s = {};
  s.floor = 0.0;
  EXPECT_THROW(s.validate(), InvariantError);
  s = {};
  s.sigma_init = 0.0;
  EXPECT_THROW(s.validate(), InvariantError);
}

TEST(Perturbation, ZeroSigmaIsIdentity) {
  std::mt19937_64 rng(1);
  Policy p = start_policy(12);
  p.theta.setLinSpaced(12, -1, 1);
  const auto [q, eps] = perturb_parameters(p, 0.0, rng);
  EXPECT_EQ(q.theta, p.theta);
  EXPECT_TRUE(eps.isZero(0.0));
  const Vec6 g = make_vec6(1, 2, 3, 4, 5, 6);
  EXPECT_EQ(perturb_goal(g, 0.0, rng).first, g);
}

TEST(Perturbation, SeededDrawsRepeat) {
  std::mt19937_64 a(99), b(99);
  EXPECT_EQ(perturb_parameters(start_policy(30), 300.0, a).second,
            perturb_parameters(start_policy(30), 300.0, b).second);
}

TEST(Perturbation, ParameterVarianceMatchesSigma) {
  std::mt19937_64 rng(5);
  const int n = 100000;
  const Policy p = start_policy(1);
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double e = perturb_parameters(p, 300.0, rng).second[0];
    sum += e;
    sq += e * e;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(var / 300.0, 1.0, 0.05);
}

TEST(Perturbation, GoalStdAndOrientationUntouched) {
  std::mt19937_64 rng(6);
  const Vec6 g = make_vec6(0.4, 0.1, 0.2, 0.3, -0.2, 0.1);
  const int n = 100000;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    const auto [out, eps] = perturb_goal(g, 0.04, rng);
    ASSERT_EQ(out.tail<3>(), g.tail<3>());
    ASSERT_EQ(eps.tail<3>(), Eigen::Vector3d::Zero());
    sum += eps.head<3>();
    sq += eps.head<3>().cwiseProduct(eps.head<3>());
  }
  for (int a = 0; a < 3; ++a) {
    const double mean = sum[a] / n;
    EXPECT_NEAR(std::sqrt(sq[a] / n - mean * mean) / 0.04, 1.0, 0.05);
  }
}

TEST(Pi2, WeightsNormalizedAndMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> c(9);
    for (auto& x : c) x = u(rng);
    const auto w = pi2_weights(c, 10.0);
    ASSERT_NEAR(w.sum(), 1.0, 1e-12);
    for (int i = 0; i < 9; ++i) {
      ASSERT_GE(w[i], 0.0);
      for (int j = 0; j < 9; ++j) {
        if (c[i] < c[j]) ASSERT_GE(w[i], w[j]);
      }
    }
  }
}

TEST(Pi2, EqualCostsGiveUniformWeights) {
  const std::vector<double> c(7, 0.4);
  const auto w = pi2_weights(c, 10.0);
  for (int i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(w[i], 1.0 / 7.0);
}

TEST(Pi2, SingleFiniteRolloutTakesAllWeight) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Rollout> rs = {with_cost(inf, Eigen::VectorXd::Constant(3, 5.0)),
                             with_cost(0.7, Eigen::Vector3d(0.1, -0.2, 0.3)),
                             with_cost(inf, Eigen::VectorXd::Constant(3, -5.0))};
  const Policy next = pi2_update(start_policy(3), rs, 10.0);
  EXPECT_LT((next.theta - Eigen::Vector3d(0.1, -0.2, 0.3)).norm(), 1e-15);
}

TEST(Pi2, GoalUpdatedOnlyWhenLearningGoals) {
  std::vector<Rollout> rs = {with_cost(0.0, Eigen::VectorXd::Zero(2)), with_cost(1.0, Eigen::VectorXd::Zero(2))};
  rs[0].goal = make_vec6(0.1, 0.2, 0.3, 9, 9, 9);
  const Policy p = start_policy(2);
  EXPECT_EQ(pi2_update(p, rs, 10.0, false).goal, Vec6::Zero());
  const Policy q = pi2_update(p, rs, 10.0, true);
  EXPECT_GT(q.goal[0], 0.0);
  EXPECT_EQ(q.goal.tail<3>(), Vec6::Zero().tail<3>());
}

TEST(Pi2, ConvergesOnQuadratic) {
  const auto problem = toy(6);
  ExplorationSchedule s;
  s.sigma_init = 0.5;
  const auto state = run_learning(problem, start_policy(6), Algorithm::PI2, s, {}, 17);
  EXPECT_EQ(state.update_index, 100);
  const double d0 = problem.target.norm();
  EXPECT_LT((state.current.theta - problem.target).norm(), 0.1 * d0);
}

TEST(Power, ReturnsPositiveAndEqualReturnsAverage) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  std::vector<double> c(9);
  for (auto& x : c) x = u(rng);
  EXPECT_TRUE((power_returns(c).array() > 0.0).all());
  EXPECT_TRUE((normalized_power_returns(c).array() > 0.0).all());
  EXPECT_NEAR(power_returns(std::vector<double>{0.5})[0], std::exp(-0.5), 1e-15);

  std::vector<Rollout> rs;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector2d e(k, -2.0 * k);
    rs.push_back(with_cost(1.3, e));
    mean += e / 4.0;
  }
  EXPECT_LT((power_update(start_policy(2), rs).theta - mean).norm(), 1e-12);
}

TEST(Power, UpdateInConvexHull) {
  // One axis: the update must lie between the smallest and largest epsilon.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Rollout> rs;
    double lo = 1e300, hi = -1e300;
    for (int k = 0; k < 9; ++k) {
      const double e = n(rng);
      lo = std::min(lo, e);
      hi = std::max(hi, e);
      rs.push_back(with_cost(std::abs(n(rng)) * 3, Eigen::VectorXd::Constant(1, e)));
    }
    const double step = power_update(start_policy(1), rs).theta[0];
    ASSERT_GE(step, lo - 1e-12);
    ASSERT_LE(step, hi + 1e-12);
  }
}

TEST(Power, ConvergesOnQuadratic) {
  const auto problem = toy(6);
  ExplorationSchedule s;
  s.sigma_init = 0.5;
  const auto state = run_learning(problem, start_policy(6), Algorithm::PoWER, s, {}, 17);
  const double d0 = problem.target.norm();
  EXPECT_LT((state.current.theta - problem.target).norm(), 0.15 * d0);
}

TEST(Enac, GradientSignMatchesFiniteDifferences) {
  // Gaussian policy a ~ N(theta, var), cost (a - 1)^2. The expected cost has a
  // closed form, differentiated numerically as the oracle.
  const double var = 0.25;
  auto expected_cost = [&](double th) { return (th - 1.0) * (th - 1.0) + var; };
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2.0, 4.0);
  std::normal_distribution<double> n(0.0, std::sqrt(var));
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double theta = u(rng);
    const int k = 9;
    Eigen::MatrixXd scores(k, 1);
    std::vector<double> costs(k);
    for (int i = 0; i < k; ++i) {
      const double eps = n(rng);
      scores(i, 0) = eps / var;
      costs[i] = (theta + eps - 1.0) * (theta + eps - 1.0);
    }
    const auto g = enac_gradient(scores, costs, 1e-6);
    const double fd = (expected_cost(theta + 1e-4) - expected_cost(theta - 1e-4)) / 2e-4;
    // w ascends reward = -cost.
    if ((g.w[0] > 0) == (fd < 0)) ++agree;
  }
  EXPECT_GE(agree, 95);
}

TEST(Enac, ConstantCostGivesZeroGradient) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd scores(9, 4);
  for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = n(rng);
  const std::vector<double> costs(9, 0.8);
  const auto g = enac_gradient(scores, costs, 1e-6);
  EXPECT_LT(g.w.norm(), 1e-9);
  EXPECT_NEAR(g.baseline, -0.8, 1e-9);
}

TEST(Enac, UnderdeterminedRegressionFlagged) {
  Eigen::MatrixXd scores = Eigen::MatrixXd::Random(3, 10);
  const std::vector<double> costs = {0.1, 0.5, 0.9};
  const auto g = enac_gradient(scores, costs, 1e-6);
  EXPECT_TRUE(g.singular);
  EXPECT_TRUE(g.w.allFinite());
}

TEST(Enac, ZeroStepIsIdentity) {
  std::vector<Rollout> rs = {with_cost(0.1, Eigen::Vector2d(1, 2)), with_cost(0.9, Eigen::Vector2d(-1, 0)),
                             with_cost(0.4, Eigen::Vector2d(0, 3))};
  Eigen::MatrixXd scores(3, 2);
  scores << 1, 2, -1, 0, 0, 3;
  Policy p = start_policy(2);
  p.theta << 0.3, -0.7;
  EXPECT_EQ(enac_update(p, rs, scores, 0.0, 1e-6).policy.theta, p.theta);
}

TEST(Enac, ImprovesQuadratic) {
  const auto problem = toy(3);
  ExplorationSchedule s;
  s.sigma_init = 0.5;
  const auto state = run_learning(problem, start_policy(3), Algorithm::eNAC, s, {}, 17);
  EXPECT_LT((state.current.theta - problem.target).norm(), problem.target.norm());
}

TEST(RunLearning, DeterministicHistory) {
  const auto problem = toy(6);
  ExplorationSchedule s;
  s.sigma_init = 0.5;
  for (Algorithm a : {Algorithm::PI2, Algorithm::PoWER, Algorithm::eNAC}) {
    LearningOptions parallel;
    parallel.workers = 4;
    const auto x = run_learning(problem, start_policy(6), a, s, {20, 7, 2}, 33);
    const auto y = run_learning(problem, start_policy(6), a, s, {20, 7, 2}, 33, parallel);
    EXPECT_EQ(x.history, y.history) << to_string(a);
    EXPECT_EQ(x.current.theta, y.current.theta);
  }
}

TEST(RunLearning, ElitesAndBestCostInvariants) {
  const auto problem = toy(6);
  ExplorationSchedule s;
  s.sigma_init = 2.0;
  for (Algorithm a : {Algorithm::PI2, Algorithm::PoWER, Algorithm::eNAC}) {
    const auto state = run_learning(problem, start_policy(6), a, s, {40, 7, 2}, 9);
    ASSERT_EQ(state.history.size(), 40u);
    std::vector<double> seen = {state.initial.total_cost};
    double running = state.initial.total_cost;
    for (const auto& rep : state.history) {
      // Update 1 carries only the initial roll-out as an elite.
      EXPECT_EQ(rep.costs.size(), rep.update == 1 ? 8u : 9u);
      EXPECT_LE(rep.best_cost, running);
      running = std::min(running, rep.best_cost);
      seen.insert(seen.end(), rep.costs.begin(), rep.costs.begin() + 7);
    }
    ASSERT_LE(state.elites.size(), 2u);
    ASSERT_EQ(state.elites.size(), 2u);
    EXPECT_LE(state.elites[0].total_cost, state.elites[1].total_cost);
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(state.elites[0].total_cost, seen[0]);
    EXPECT_LE(state.elites[1].total_cost, seen[1]);
  }
}

TEST(RunLearning, StopsOnFirstSuccess) {
  auto problem = toy(2);
  problem.success_below = 1.0;
  ExplorationSchedule s;
  s.sigma_init = 1.0;
  const auto state = run_learning(problem, start_policy(2), Algorithm::PI2, s, {}, 4);
  ASSERT_TRUE(state.success);
  ASSERT_TRUE(state.deployed.has_value());
  EXPECT_TRUE(state.deployed->success);
  EXPECT_EQ(state.first_success_update, state.update_index);
  EXPECT_EQ(static_cast<int>(state.history.size()), state.update_index);
  EXPECT_TRUE(state.history.back().success);
  for (std::size_t i = 0; i + 1 < state.history.size(); ++i) EXPECT_FALSE(state.history[i].success);
  EXPECT_EQ(state.current.theta, state.deployed->theta);
}

TEST(RunLearning, ImmediateSuccessNeedsNoUpdates) {
  auto problem = toy(2);
  problem.success_below = 1e9;
  const auto state = run_learning(problem, start_policy(2), Algorithm::PoWER, {}, {}, 4);
  EXPECT_TRUE(state.success);
  EXPECT_EQ(state.update_index, 0);
  EXPECT_EQ(state.first_success_update, 0);
  EXPECT_TRUE(state.history.empty());
}

TEST(RunLearning, ZeroBudgetReportsFailure) {
  const auto problem = toy(2);
  const auto state = run_learning(problem, start_policy(2), Algorithm::PI2, {}, {0, 7, 2}, 4);
  EXPECT_FALSE(state.success);
  EXPECT_EQ(state.update_index, 0);
  EXPECT_FALSE(state.deployed.has_value());
}

TEST(RolloutInvariant, TotalIsTerminalPlusSteps) {
  Evaluation e;
  e.step_costs = {0.1, 0.2, 0.3};
  e.terminal_cost = 0.4;
  const Policy p = start_policy(1);
  const auto r = detail::to_rollout(e, p, p.theta, p.goal, {}, 0.0, 1, false);
  EXPECT_NEAR(r.total_cost, 1.0, 1e-12);
}

TEST(Algorithms, NamesRoundTrip) {
  for (Algorithm a : {Algorithm::PI2, Algorithm::PoWER, Algorithm::eNAC}) EXPECT_EQ(parse_algorithm(to_string(a)), a);
  EXPECT_FALSE(parse_algorithm("cma").has_value());
}
