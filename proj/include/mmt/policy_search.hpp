#pragma once

// Episodic policy search over DMP parameters (and optionally the DMP goal):
// PI2, PoWER and episodic natural actor-critic, with linearly decaying
// exploration, elite retention and a fixed update / roll-out budget.

#include "mmt/core.hpp"
#include "mmt/dmp.hpp"
#include "mmt/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace mmt {

enum class Algorithm { PI2, PoWER, eNAC };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::PI2: return "pi2";
    case Algorithm::PoWER: return "power";
    case Algorithm::eNAC: return "enac";
  }
  return "unknown";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view s) {
  if (s == "pi2") return Algorithm::PI2;
  if (s == "power") return Algorithm::PoWER;
  if (s == "enac") return Algorithm::eNAC;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Exploration schedule

struct ExplorationSchedule {
  double sigma_init = 300.0;  // covariance scale: parameter space (PI2/PoWER), per-step action space (eNAC)
  double goal_sigma = 0.0;    // goal standard deviation [m]
  int update_max = 100;
  double floor = 0.1;

  void validate() const {
    if (!(sigma_init > 0.0)) throw InvariantError("ExplorationSchedule", "sigma_init must be positive");
    if (!(goal_sigma >= 0.0)) throw InvariantError("ExplorationSchedule", "goal_sigma must be non-negative");
    if (update_max < 1) throw InvariantError("ExplorationSchedule", "update_max must be >= 1");
    if (!(floor > 0.0 && floor <= 1.0)) throw InvariantError("ExplorationSchedule", "floor must lie in (0, 1]");
  }
};

/// max((update_max - i) / update_max, floor)
inline double decay_factor(int i, int update_max, double floor = 0.1) {
  const double linear = static_cast<double>(update_max - i) / static_cast<double>(update_max);
  return std::max(linear, floor);
}

inline double scaled_sigma(const ExplorationSchedule& schedule, int i) {
  return decay_factor(i, schedule.update_max, schedule.floor) * schedule.sigma_init;
}

// ---------------------------------------------------------------------------
// Policy and roll-outs

struct Policy {
  Eigen::VectorXd theta;
  Vec6 goal = Vec6::Zero();
  std::shared_ptr<const DmpParams> meta;  // null for problems that are not DMPs

  void validate() const {
    if (!theta.allFinite() || !goal.allFinite()) throw InvariantError("Policy", "non-finite entries");
    if (meta && theta.size() != kPoseDims * meta->n_basis) {
      throw InvariantError("Policy", "theta length must be 6 * n_basis");
    }
  }
};

/// Concatenates the weights of all six dimensions (dimension-major).
inline Policy policy_from_dmp(const DmpParams& params, const Vec6& goal) {
  Policy p;
  p.theta.resize(kPoseDims * params.n_basis);
  for (int d = 0; d < kPoseDims; ++d) p.theta.segment(d * params.n_basis, params.n_basis) = params.dims[d].weights;
  p.goal = goal;
  p.meta = std::make_shared<const DmpParams>(params);
  return p;
}

/// The DMP template with weights replaced by `theta`.
inline DmpParams dmp_with_theta(const DmpParams& meta, const Eigen::Ref<const Eigen::VectorXd>& theta) {
  DmpParams out = meta;
  for (int d = 0; d < kPoseDims; ++d) out.dims[d].weights = theta.segment(d * meta.n_basis, meta.n_basis);
  return out;
}

struct Rollout {
  Eigen::VectorXd theta;    // parameters the episode ran with
  Eigen::VectorXd epsilon;  // theta minus the generating policy's theta
  Vec6 goal = Vec6::Zero();
  Vec6 goal_epsilon = Vec6::Zero();
  Eigen::MatrixXd action_noise;  // eNAC only: one row per step
  double action_sigma = 0.0;
  std::optional<Trajectory> trajectory;
  std::vector<double> step_costs;
  double terminal_cost = 0.0;
  double total_cost = 0.0;
  int n_fingers = 0;
  bool success = false;
  int generation = 0;  // update that produced it; 0 for the unperturbed start
};

/// What a problem reports for one executed episode.
struct Evaluation {
  std::optional<Trajectory> trajectory;
  std::vector<double> step_costs;
  double terminal_cost = 0.0;
  int n_fingers = 0;
  bool success = false;
};

/// An episodic task the learner can roll out.
///
/// `action_steps()` is the number of per-step action rows eNAC perturbs (6
/// columns each); `score` returns sum_t grad_theta log pi(a_t | s_t) of a roll-out
/// under the given current parameters, without the 1 / sigma^2 factor.
template <class P>
concept LearningProblem = requires(const P& p, const Eigen::VectorXd& theta, const Vec6& goal,
                                   const Eigen::MatrixXd* noise, const Rollout& r) {
  { p.evaluate(theta, goal, noise) } -> std::same_as<Evaluation>;
  { p.action_steps() } -> std::convertible_to<Eigen::Index>;
  { p.score(r, theta, goal) } -> std::same_as<Eigen::VectorXd>;
};

template <class Rng>
std::pair<Policy, Eigen::VectorXd> perturb_parameters(const Policy& policy, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("perturb_parameters: sigma must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double stddev = std::sqrt(sigma);
  Eigen::VectorXd eps(policy.theta.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = stddev * normal(rng);
  Policy out = policy;
  out.theta += eps;
  return {std::move(out), std::move(eps)};
}

/// Gaussian perturbation of the three position components only.
template <class Rng>
std::pair<Vec6, Vec6> perturb_goal(const Vec6& goal, double goal_sigma, Rng& rng) {
  if (!(goal_sigma >= 0.0)) throw std::invalid_argument("perturb_goal: goal_sigma must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec6 eps = Vec6::Zero();
  for (int i = 0; i < 3; ++i) eps[i] = goal_sigma * normal(rng);
  Vec6 out = goal;
  out.head<3>() += eps.head<3>();
  return {out, eps};
}

// ---------------------------------------------------------------------------
// Updates

/// exp(-h (J - Jmin) / (Jmax - Jmin)), normalized; non-finite costs get weight 0.
inline Eigen::VectorXd pi2_weights(std::span<const double> costs, double h) {
  const auto n = static_cast<Eigen::Index>(costs.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double c : costs) {
    if (!std::isfinite(c)) continue;
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (!std::isfinite(lo)) throw std::invalid_argument("pi2_weights: no finite cost");
  const double span = hi - lo;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double c = costs[static_cast<std::size_t>(k)];
    if (!std::isfinite(c)) continue;
    w[k] = span > 0.0 ? std::exp(-h * (c - lo) / span) : 1.0;
  }
  return w / w.sum();
}

/// Returns exp(-J). Computed as exp(-(J - Jmin)) * exp(-Jmin) so the ratio used by
/// the update never underflows; `normalized_power_returns` exposes the shifted form.
inline Eigen::VectorXd power_returns(std::span<const double> costs) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(costs.size()));
  for (std::size_t k = 0; k < costs.size(); ++k) r[static_cast<Eigen::Index>(k)] = std::exp(-costs[k]);
  return r;
}

inline Eigen::VectorXd normalized_power_returns(std::span<const double> costs) {
  const double lo = *std::min_element(costs.begin(), costs.end());
  Eigen::VectorXd r(static_cast<Eigen::Index>(costs.size()));
  for (std::size_t k = 0; k < costs.size(); ++k) r[static_cast<Eigen::Index>(k)] = std::exp(-(costs[k] - lo));
  return r;
}

namespace detail {

inline std::vector<double> total_costs(std::span<const Rollout> rollouts) {
  std::vector<double> c;
  c.reserve(rollouts.size());
  for (const auto& r : rollouts) c.push_back(r.total_cost);
  return c;
}

inline Policy weighted_step(const Policy& current, std::span<const Rollout> rollouts, const Eigen::VectorXd& w,
                            bool goal_learning) {
  Policy out = current;
  Eigen::VectorXd dtheta = Eigen::VectorXd::Zero(current.theta.size());
  Vec6 dgoal = Vec6::Zero();
  for (std::size_t k = 0; k < rollouts.size(); ++k) {
    const double wk = w[static_cast<Eigen::Index>(k)];
    if (wk == 0.0) continue;
    dtheta += wk * (rollouts[k].theta - current.theta);
    dgoal.head<3>() += wk * (rollouts[k].goal.head<3>() - current.goal.head<3>());
  }
  out.theta += dtheta;
  if (goal_learning) out.goal += dgoal;
  return out;
}

}  // namespace detail

/// Probability-weighted average of the roll-outs' perturbations (relative to the
/// current policy, so retained elites contribute correctly).
inline Policy pi2_update(const Policy& current, std::span<const Rollout> rollouts, double h,
                         bool goal_learning = false) {
  if (rollouts.size() < 2) throw std::invalid_argument("pi2_update: at least 2 roll-outs are required");
  const auto costs = detail::total_costs(rollouts);
  return detail::weighted_step(current, rollouts, pi2_weights(costs, h), goal_learning);
}

/// Return-weighted average of perturbations with R = exp(-J).
inline Policy power_update(const Policy& current, std::span<const Rollout> rollouts, bool goal_learning = false) {
  if (rollouts.size() < 2) throw std::invalid_argument("power_update: at least 2 roll-outs are required");
  const auto costs = detail::total_costs(rollouts);
  for (double c : costs) {
    if (!std::isfinite(c)) throw std::invalid_argument("power_update: costs must be finite");
  }
  const Eigen::VectorXd r = normalized_power_returns(costs);
  return detail::weighted_step(current, rollouts, r / r.sum(), goal_learning);
}

struct NaturalGradient {
  Eigen::VectorXd w;
  double baseline = 0.0;
  bool singular = false;  // under-determined or rank-deficient regression
};

/// Episodic natural-gradient regression: [psi_k, 1] [w; b] ~= -J_k, solved as a
/// ridge problem (unpenalized baseline). Rows of `scores` are per-roll-out
/// summed log-likelihood gradients.
inline NaturalGradient enac_gradient(const Eigen::MatrixXd& scores, std::span<const double> costs, double ridge) {
  const Eigen::Index k = scores.rows();
  if (k != static_cast<Eigen::Index>(costs.size()) || k < 2) {
    throw std::invalid_argument("enac_gradient: need >= 2 roll-outs with one score row each");
  }
  Eigen::VectorXd reward(k);
  for (Eigen::Index i = 0; i < k; ++i) reward[i] = -costs[static_cast<std::size_t>(i)];
  const Eigen::RowVectorXd mean_score = scores.colwise().mean();
  const double mean_reward = reward.mean();
  const Eigen::MatrixXd centered = scores.rowwise() - mean_score;
  const Eigen::VectorXd target = reward.array() - mean_reward;

  NaturalGradient out;
  const Eigen::MatrixXd gram = centered * centered.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> rank_probe(centered);
  rank_probe.setThreshold(1e-12);
  out.singular = k - 1 < scores.cols() || rank_probe.rank() < std::min(k - 1, scores.cols());
  const Eigen::MatrixXd regularized = gram + ridge * Eigen::MatrixXd::Identity(k, k);
  out.w = centered.transpose() * regularized.ldlt().solve(target);
  out.baseline = mean_reward - mean_score.dot(out.w);
  return out;
}

struct EnacStep {
  Policy policy;
  bool singular = false;
};

/// theta <- theta + alpha * w. With goal learning the last three score columns
/// belong to the goal position.
inline EnacStep enac_update(const Policy& current, std::span<const Rollout> rollouts, const Eigen::MatrixXd& scores,
                            double alpha, double ridge, bool goal_learning = false) {
  const auto costs = detail::total_costs(rollouts);
  const NaturalGradient g = enac_gradient(scores, costs, ridge);
  EnacStep out{current, g.singular};
  const Eigen::Index n = current.theta.size();
  out.policy.theta += alpha * g.w.head(n);
  if (goal_learning && g.w.size() >= n + 3) out.policy.goal.head<3>() += alpha * g.w.segment(n, 3);
  return out;
}

// ---------------------------------------------------------------------------
// Learning loop

struct Budget {
  int update_max = 100;
  int rollouts_per_update = 7;
  int elites = 2;
};

struct LearningOptions {
  bool goal_learning = false;
  bool stop_on_success = true;
  double pi2_h = 10.0;
  double enac_alpha = 0.2;
  double enac_ridge = 1e-6;
  int workers = 1;
  bool keep_trajectories = false;  // for retained and deployed roll-outs
};

struct EpisodeReport {
  int update = 0;
  Algorithm algo = Algorithm::PI2;
  double sigma = 0.0;
  std::vector<double> costs;  // fresh roll-outs, then retained elites
  double best_cost = 0.0;
  int n_fingers_best = 0;
  bool success = false;

  nlohmann::json to_json() const {
    return {{"update", update},       {"algo", to_string(algo)}, {"sigma", sigma},
            {"costs", costs},         {"best_cost", best_cost},  {"n_fingers_best", n_fingers_best},
            {"success", success}};
  }

  friend bool operator==(const EpisodeReport&, const EpisodeReport&) = default;
};

struct LearningState {
  Policy current;
  int update_index = 0;
  std::vector<Rollout> elites;  // ascending by total cost
  std::uint64_t rng_seed = 0;
  std::vector<EpisodeReport> history;
  Rollout initial;                 // the unperturbed policy's episode
  std::optional<Rollout> deployed;  // a roll-out that passed the grasp test
  bool success = false;
  int first_success_update = -1;  // update that produced the first successful roll-out
  int singular_updates = 0;  // eNAC regressions that needed the ridge term
};

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&fn, t, w, n] {
      for (std::size_t i = t; i < n; i += w) fn(i);
    });
  }
}

namespace detail {

inline Rollout to_rollout(Evaluation e, const Policy& generator, Eigen::VectorXd theta, Vec6 goal,
                          Eigen::MatrixXd noise, double action_sigma, int generation, bool keep_trajectory) {
  Rollout r;
  r.epsilon = theta - generator.theta;
  r.theta = std::move(theta);
  r.goal_epsilon = goal - generator.goal;
  r.goal = goal;
  r.action_noise = std::move(noise);
  r.action_sigma = action_sigma;
  if (keep_trajectory) r.trajectory = std::move(e.trajectory);
  r.step_costs = std::move(e.step_costs);
  r.terminal_cost = e.terminal_cost;
  r.total_cost = e.terminal_cost + std::accumulate(r.step_costs.begin(), r.step_costs.end(), 0.0);
  r.n_fingers = e.n_fingers;
  r.success = e.success;
  r.generation = generation;
  return r;
}

inline void retain_elites(std::vector<Rollout>& elites, std::span<const Rollout> pool, int count) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&pool](std::size_t a, std::size_t b) { return pool[a].total_cost < pool[b].total_cost; });
  std::vector<Rollout> next;
  for (std::size_t i = 0; i < order.size() && static_cast<int>(next.size()) < count; ++i) {
    next.push_back(pool[order[i]]);
  }
  elites = std::move(next);
}

}  // namespace detail

/// Perturb, evaluate, merge elites, update, decay; repeated until a roll-out
/// grasps successfully (when `stop_on_success`) or the budget is spent.
/// Deterministic given `seed`: roll-out k of update i draws from its own stream.
template <LearningProblem Problem>
LearningState run_learning(const Problem& problem, const Policy& initial, Algorithm algo,
                           const ExplorationSchedule& schedule, const Budget& budget, std::uint64_t seed,
                           const LearningOptions& options = {}) {
  schedule.validate();
  initial.validate();
  if (budget.update_max < 0 || budget.rollouts_per_update < 1 || budget.elites < 0) {
    throw std::invalid_argument("run_learning: invalid budget");
  }
  if (budget.rollouts_per_update + budget.elites < 2) {
    throw std::invalid_argument("run_learning: updates need at least 2 roll-outs");
  }
  ExplorationSchedule sched = schedule;
  sched.update_max = std::max(1, budget.update_max);

  LearningState state;
  state.current = initial;
  state.rng_seed = seed;
  {
    Evaluation e = problem.evaluate(initial.theta, initial.goal, nullptr);
    state.initial = detail::to_rollout(std::move(e), initial, initial.theta, initial.goal, {}, 0.0, 0, true);
  }
  if (budget.elites > 0) state.elites.push_back(state.initial);
  if (state.initial.success) {
    state.success = true;
    state.first_success_update = 0;
    state.deployed = state.initial;
    return state;
  }

  const auto n_fresh = static_cast<std::size_t>(budget.rollouts_per_update);
  for (int i = 0; i < budget.update_max; ++i) {
    const double gamma = decay_factor(i, sched.update_max, sched.floor);
    const double sigma = gamma * sched.sigma_init;
    const double goal_sigma = options.goal_learning ? gamma * sched.goal_sigma : 0.0;
    const Policy generator = state.current;

    std::vector<Rollout> fresh(n_fresh);
    parallel_for(n_fresh, options.workers, [&](std::size_t k) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i + 1), k));
      Eigen::VectorXd theta = generator.theta;
      Eigen::MatrixXd noise;
      double action_sigma = 0.0;
      if (algo != Algorithm::eNAC) {
        theta = perturb_parameters(generator, sigma, rng).first.theta;
      }
      const Vec6 goal = perturb_goal(generator.goal, goal_sigma, rng).first;
      if (algo == Algorithm::eNAC) {
        action_sigma = std::sqrt(sigma);
        std::normal_distribution<double> normal(0.0, 1.0);
        noise.resize(problem.action_steps(), kPoseDims);
        for (Eigen::Index r = 0; r < noise.rows(); ++r) {
          for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = action_sigma * normal(rng);
        }
      }
      Evaluation e = problem.evaluate(theta, goal, noise.size() > 0 ? &noise : nullptr);
      fresh[k] = detail::to_rollout(std::move(e), generator, std::move(theta), goal, std::move(noise), action_sigma,
                                    i + 1, options.keep_trajectories);
    });

    std::vector<Rollout> pool = fresh;
    pool.insert(pool.end(), state.elites.begin(), state.elites.end());

    EpisodeReport report;
    report.update = i + 1;
    report.algo = algo;
    report.sigma = sigma;
    for (const auto& r : pool) report.costs.push_back(r.total_cost);
    const auto best = std::min_element(pool.begin(), pool.end(), [](const Rollout& a, const Rollout& b) {
      return a.total_cost < b.total_cost;
    });
    report.best_cost = best->total_cost;
    report.n_fingers_best = best->n_fingers;

    const Rollout* winner = nullptr;
    for (const auto& r : fresh) {
      if (r.success && (winner == nullptr || r.total_cost < winner->total_cost)) winner = &r;
    }
    report.success = winner != nullptr;

    if (winner != nullptr && state.first_success_update < 0) state.first_success_update = i + 1;
    if (winner != nullptr && (!state.deployed || winner->total_cost < state.deployed->total_cost)) {
      state.deployed = *winner;
    }
    if (winner != nullptr && options.stop_on_success) {
      state.success = true;
      state.current.theta = winner->theta;
      state.current.goal = winner->goal;
      state.update_index = i + 1;
      detail::retain_elites(state.elites, pool, budget.elites);
      state.history.push_back(std::move(report));
      break;
    }
    state.success = state.success || winner != nullptr;

    switch (algo) {
      case Algorithm::PI2:
        state.current = pi2_update(generator, pool, options.pi2_h, options.goal_learning);
        break;
      case Algorithm::PoWER:
        state.current = power_update(generator, pool, options.goal_learning);
        break;
      case Algorithm::eNAC: {
        const Eigen::Index n = generator.theta.size();
        const Eigen::Index cols = n + (options.goal_learning ? 3 : 0);
        Eigen::MatrixXd scores(static_cast<Eigen::Index>(pool.size()), cols);
        const double var = sigma;
        const double goal_var = goal_sigma * goal_sigma;
        for (std::size_t k = 0; k < pool.size(); ++k) {
          const auto row = static_cast<Eigen::Index>(k);
          scores.row(row).head(n) = problem.score(pool[k], generator.theta, generator.goal).transpose() / var;
          if (options.goal_learning) {
            const Vec3 dg = pool[k].goal.head<3>() - generator.goal.head<3>();
            const Vec3 g = goal_var > 0.0 ? Vec3(dg / goal_var) : Vec3::Zero();
            scores.row(row).tail(3) = g.transpose();
          }
        }
        EnacStep step = enac_update(generator, pool, scores, options.enac_alpha, options.enac_ridge,
                                    options.goal_learning);
        state.current = std::move(step.policy);
        if (step.singular) ++state.singular_updates;
        break;
      }
    }
    detail::retain_elites(state.elites, pool, budget.elites);
    state.update_index = i + 1;
    state.history.push_back(std::move(report));
  }
  return state;
}

}  // namespace mmt
