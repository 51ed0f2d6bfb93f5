#pragma once

// Input side -> delayed channel -> avatar side.
//
// The input side synthesizes a reach demonstration and encodes it as a DMP; the
// payload travels over a channel that only advances a simulation clock; the
// avatar side reconstructs the DMP for the object pose it believes in, tries the
// grasp in simulation and falls back to policy search when it fails.

#include "mmt/avatar_sim.hpp"
#include "mmt/dmp.hpp"
#include "mmt/grasp_cost.hpp"
#include "mmt/policy_search.hpp"
#include "mmt/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace mmt {

// ---------------------------------------------------------------------------
// Channel

class DelayedChannel {
 public:
  struct Message {
    double send_time = 0.0;
    double delivery_time = 0.0;
    std::string payload;
  };

  DelayedChannel(double latency = 0.0, double jitter = 0.0, std::uint64_t seed = 0)
      : latency_(latency), jitter_(jitter), rng_(seed) {
    if (!(latency >= 0.0) || !(jitter >= 0.0)) {
      throw InvariantError("DelayedChannel", "latency and jitter must be non-negative");
    }
  }

  double latency() const noexcept { return latency_; }
  double jitter() const noexcept { return jitter_; }

  /// Queues `payload`; returns its delivery time. Later sends never overtake
  /// earlier ones.
  double transmit(std::string payload, double t_send) {
    double delay = latency_;
    if (jitter_ > 0.0) delay += std::uniform_real_distribution<double>(0.0, jitter_)(rng_);
    const double delivery = std::max(t_send + delay, last_delivery_);
    last_delivery_ = delivery;
    queue_.push_back({t_send, delivery, std::move(payload)});
    return delivery;
  }

  /// Pops the oldest message if it has arrived by `now`.
  std::optional<Message> receive(double now) {
    if (queue_.empty() || queue_.front().delivery_time > now) return std::nullopt;
    Message m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  std::optional<double> next_delivery() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.front().delivery_time;
  }

  std::size_t pending() const noexcept { return queue_.size(); }

 private:
  double latency_;
  double jitter_;
  std::mt19937_64 rng_;
  std::deque<Message> queue_;
  double last_delivery_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Episode configuration

/// Table at z = 0, a 2.4 x 2.4 x 20 cm box standing 30 cm ahead of the home pose.
inline Scene default_scene() {
  Scene s;
  s.object.shape = Box{Vec3(0.024, 0.024, 0.20)};
  s.object.true_pose = make_vec6(0.40, 0.0, 0.10, 0.0, 0.0, 0.0);
  s.object.believed_pose = s.object.true_pose;
  s.table_height = 0.0;
  s.workspace = {Vec3(-0.10, -0.50, 0.0), Vec3(1.00, 0.50, 0.80)};
  return s;
}

enum class DemoKind { MinJerkReach, ArcReach };

inline std::string to_string(DemoKind k) { return k == DemoKind::MinJerkReach ? "min_jerk_reach" : "arc_reach"; }

struct EpisodeConfig {
  Scene scene = default_scene();  // nominal scene the operator demonstrated on
  EndEffector hand = default_hand();
  DemoKind demo_kind = DemoKind::MinJerkReach;
  Vec6 home_pose = make_vec6(0.10, 0.0, 0.35, 0.0, 0.0, 0.0);
  Vec3 approach = Vec3(0.0, 0.0, 0.10);  // wrist offset from the object center at grasp
  double arc_height = 0.05;
  double demo_duration = 3.0;
  double dt = 0.01;
  int n_basis = 20;

  Eigen::Vector2d displacement = Eigen::Vector2d::Zero();  // known to the avatar side
  double uncertainty = 0.0;                                // unknown offset of the true object
  double latency = 0.0;
  double jitter = 0.0;

  Algorithm algo = Algorithm::PI2;
  ExplorationSchedule schedule;
  Budget budget;
  LearningOptions options;
  CostConfig cost;
  GraspCriteria criteria;
  std::vector<std::uint64_t> seeds = {1};

  /// Believed object pose on the avatar side.
  Vec6 displaced_pose() const {
    Vec6 p = scene.object.believed_pose;
    p.head<2>() += displacement;
    return p;
  }

  Vec6 pregrasp_pose(const Vec6& object_pose) const {
    Vec6 p = home_pose;
    p.head<3>() = object_pose.head<3>() + approach;
    return p;
  }

  void validate() const {
    scene.validate();
    hand.validate();
    if (!displacement.allFinite() || !(uncertainty >= 0.0) || !(latency >= 0.0) || !(jitter >= 0.0)) {
      throw InvariantError("EpisodeConfig", "displacement, uncertainty, latency and jitter must be finite and >= 0");
    }
    if (!(demo_duration > 0.0) || !(dt > 0.0) || dt > demo_duration / 10.0) {
      throw InvariantError("EpisodeConfig", "need demo_duration > 0 and 0 < dt <= demo_duration / 10");
    }
    if (n_basis < 2) throw InvariantError("EpisodeConfig", "n_basis must be >= 2");
    if (seeds.empty()) throw InvariantError("EpisodeConfig", "seeds must be non-empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw InvariantError("EpisodeConfig", "seeds must be distinct");
    }
    if (!scene.workspace.contains(home_pose.head<3>())) {
      throw InvariantError("EpisodeConfig", "home pose lies outside the workspace");
    }
    const Vec6 moved = displaced_pose();
    if (!scene.workspace.contains(moved.head<3>())) {
      throw InvariantError("EpisodeConfig", "displaced object lies outside the workspace");
    }
    if (!scene.workspace.contains(pregrasp_pose(moved).head<3>())) {
      throw InvariantError("EpisodeConfig", "displaced pre-grasp pose lies outside the workspace");
    }
    if (budget.update_max < 0 || budget.rollouts_per_update < 1 || budget.elites < 0) {
      throw InvariantError("EpisodeConfig", "invalid learning budget");
    }
    schedule.validate();
  }
};

/// Operator demonstration on the nominal scene: a 3 s minimum-jerk reach from
/// the home pose to the pre-grasp pose (optionally arched upward).
inline Trajectory synthesize_demonstration(const EpisodeConfig& config) {
  const Vec6 target = config.pregrasp_pose(config.scene.object.believed_pose);
  if (!config.scene.workspace.contains(target.head<3>())) {
    throw InvariantError("EpisodeConfig", "pre-grasp pose lies outside the workspace");
  }
  Trajectory straight = minimum_jerk(config.home_pose, target, config.demo_duration, config.dt);
  if (config.demo_kind == DemoKind::MinJerkReach) return straight;

  // Arc: lift by arc_height * sin(pi * progress) along z, progress being the
  // minimum-jerk fraction, so boundary derivatives stay zero.
  std::vector<TrajectorySample> samples = straight.samples();
  const double T = config.demo_duration;
  for (auto& s : samples) {
    const double u = std::clamp(s.t / T, 0.0, 1.0);
    const double p = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    const double dp = (30.0 * u * u - 60.0 * u * u * u + 30.0 * u * u * u * u) / T;
    const double ddp = (60.0 * u - 180.0 * u * u + 120.0 * u * u * u) / (T * T);
    const double w = std::numbers::pi;
    const double h = config.arc_height;
    s.pose[2] += h * std::sin(w * p);
    s.velocity[2] += h * w * std::cos(w * p) * dp;
    s.acceleration[2] += h * (w * std::cos(w * p) * ddp - w * w * std::sin(w * p) * dp * dp);
  }
  return Trajectory(std::move(samples), config.dt);
}

/// Avatar-side scene: the object moved by the known displacement, then its true
/// position offset by the unknown uncertainty in a seeded random direction.
inline Scene avatar_scene(const EpisodeConfig& config, std::uint64_t seed) {
  Scene s = config.scene;
  const Vec6 moved = config.displaced_pose();
  s.object.believed_pose = moved;
  s.object.true_pose = moved;
  std::mt19937_64 rng(derive_seed(seed, 0xA5A5u));
  return inject_uncertainty(s, config.uncertainty, rng);
}

// ---------------------------------------------------------------------------
// Grasping as a learning problem

class DmpGraspProblem {
 public:
  DmpGraspProblem(DmpParams meta, Vec6 start, Scene scene, EndEffector hand, double dt, CostConfig cost,
                  GraspCriteria criteria)
      : meta_(std::move(meta)),
        start_(start),
        scene_(std::move(scene)),
        hand_(std::move(hand)),
        dt_(dt),
        cost_(cost),
        criteria_(criteria),
        basis_(meta_.n_basis, meta_.gains.alpha_x) {
    meta_.validate();
    scene_.validate();
    hand_.validate();
    cost_.max_fingers = scene_.object.max_fingers;
    cost_.window_fraction = criteria_.window_fraction;
    steps_ = static_cast<Eigen::Index>(std::llround(meta_.duration / dt_)) + 1;
    normalized_.resize(steps_, meta_.n_basis);
    phase_.resize(steps_);
    for (Eigen::Index k = 0; k < steps_; ++k) {
      phase_[k] = phase_at(static_cast<double>(k) * dt_, meta_.duration, meta_.gains);
      normalized_.row(k) = basis_.normalized(phase_[k]).transpose();
    }
  }

  const DmpParams& meta() const noexcept { return meta_; }
  const Scene& scene() const noexcept { return scene_; }
  double episode_duration() const noexcept { return meta_.duration; }

  Trajectory trajectory(const Eigen::VectorXd& theta, const Vec6& goal, const Eigen::MatrixXd* noise = nullptr) const {
    return integrate_dmp(dmp_with_theta(meta_, theta), start_, goal, dt_, meta_.duration, noise);
  }

  Evaluation evaluate(const Eigen::VectorXd& theta, const Vec6& goal, const Eigen::MatrixXd* noise) const {
    Trajectory traj = trajectory(theta, goal, noise);
    const Execution exec = execute(traj, scene_, hand_);
    const CostBreakdown c = rollout_cost(traj, theta, exec.contacts, meta_.duration, cost_);
    const GraspOutcome g = grasp_success(exec.contacts, scene_, meta_.duration, criteria_);
    Evaluation e;
    e.step_costs = c.step_costs;
    e.terminal_cost = c.terminal;
    e.n_fingers = c.n_fingers;
    e.success = g.success;
    e.trajectory = std::move(traj);
    return e;
  }

  Eigen::Index action_steps() const noexcept { return steps_; }

  /// sum_t sum_d residual_{t,d} * phi_{t,d}, where residual is the roll-out's
  /// action minus the current policy's mean action.
  Eigen::VectorXd score(const Rollout& r, const Eigen::VectorXd& theta, const Vec6& goal) const {
    const int n = meta_.n_basis;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
    const double k_inv = 1.0 / meta_.gains.stiffness();
    for (int d = 0; d < kPoseDims; ++d) {
      const auto& dim = meta_.dims[d];
      const auto th_cur = theta.segment(d * n, n);
      const auto th_run = r.theta.segment(d * n, n);
      for (Eigen::Index k = 0; k < steps_; ++k) {
        const double s = phase_[k];
        const double scale_cur = forcing_scale(dim, start_[d], goal[d], s) * k_inv;
        const double scale_run = forcing_scale(dim, start_[d], r.goal[d], s) * k_inv;
        const double mean_cur = normalized_.row(k).dot(th_cur) * scale_cur;
        double action = normalized_.row(k).dot(th_run) * scale_run;
        if (r.action_noise.size() > 0) action += r.action_noise(k, d);
        out.segment(d * n, n) += (action - mean_cur) * scale_cur * normalized_.row(k).transpose();
      }
    }
    return out;
  }

 private:
  DmpParams meta_;
  Vec6 start_;
  Scene scene_;
  EndEffector hand_;
  double dt_;
  CostConfig cost_;
  GraspCriteria criteria_;
  BasisFunctions basis_;
  Eigen::Index steps_ = 0;
  Eigen::MatrixXd normalized_;
  Eigen::VectorXd phase_;
};

// ---------------------------------------------------------------------------
// Episodes

/// Avatar side: reconstruct for the believed object pose, simulate, and learn
/// when the DMP alone does not grasp.
inline LearningState avatar_episode(const DmpParams& params, const Scene& scene, const EpisodeConfig& config,
                                    std::uint64_t seed) {
  const Vec6 goal = config.pregrasp_pose(scene.object.believed_pose);
  Vec6 oriented = goal;
  oriented.tail<3>() = params.goal().tail<3>();
  const DmpGraspProblem problem(params, params.start(), scene, config.hand, config.dt, config.cost, config.criteria);
  const Policy initial = policy_from_dmp(params, oriented);
  return run_learning(problem, initial, config.algo, config.schedule, config.budget, seed, config.options);
}

struct EpisodeRun {
  std::uint64_t seed = 0;
  double sent_at = 0.0;
  double delivered_at = 0.0;
  Scene scene;
  LearningState state;
};

/// Full loop for one seed: demonstrate, encode, transmit, receive, learn.
inline EpisodeRun run_episode(const EpisodeConfig& config, std::uint64_t seed) {
  config.validate();
  const Trajectory demo = synthesize_demonstration(config);
  const DmpParams encoded = encode_demonstration(demo, config.n_basis);

  DelayedChannel channel(config.latency, config.jitter, derive_seed(seed, 0xC4A7u));
  EpisodeRun run;
  run.seed = seed;
  run.sent_at = 0.0;
  channel.transmit(to_json(encoded).dump(), run.sent_at);

  // Avatar side acts only once the payload has arrived on the simulation clock.
  const double now = *channel.next_delivery();
  auto message = channel.receive(now);
  run.delivered_at = message->delivery_time;
  const DmpParams received = dmp_from_json(nlohmann::json::parse(message->payload));

  run.scene = avatar_scene(config, seed);
  run.state = avatar_episode(received, run.scene, config, seed);
  return run;
}

// ---------------------------------------------------------------------------
// Farm

struct FarmMember {
  std::uint64_t seed = 0;
  bool success = false;
  int updates = 0;  // update_max when learning did not succeed
  double initial_cost = 0.0;
  double best_cost = 0.0;
  int n_fingers = 0;

  nlohmann::json to_json() const {
    return {{"seed", seed},           {"success", success},     {"updates", updates},
            {"initial_cost", initial_cost}, {"best_cost", best_cost}, {"n_fingers", n_fingers}};
  }
};

/// Linear interpolation between order statistics (type 7).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty input");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct FarmResult {
  std::vector<FarmMember> members;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double success_rate = 0.0;

  static FarmResult aggregate(std::vector<FarmMember> members) {
    FarmResult r;
    r.members = std::move(members);
    std::vector<double> updates;
    int ok = 0;
    for (const auto& m : r.members) {
      updates.push_back(m.updates);
      ok += m.success ? 1 : 0;
    }
    if (!updates.empty()) {
      r.median = quantile(updates, 0.5);
      r.q1 = quantile(updates, 0.25);
      r.q3 = quantile(updates, 0.75);
      r.success_rate = static_cast<double>(ok) / static_cast<double>(updates.size());
    }
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& x : members) m.push_back(x.to_json());
    return {{"members", m}, {"median", median}, {"q1", q1}, {"q3", q3}, {"success_rate", success_rate}};
  }
};

inline FarmMember summarize(const EpisodeRun& run, const Budget& budget) {
  FarmMember m;
  m.seed = run.seed;
  m.success = run.state.success;
  m.updates = run.state.success ? run.state.first_success_update : budget.update_max;
  m.initial_cost = run.state.initial.total_cost;
  m.best_cost = run.state.initial.total_cost;
  m.n_fingers = run.state.initial.n_fingers;
  for (const auto& h : run.state.history) {
    if (h.best_cost < m.best_cost) {
      m.best_cost = h.best_cost;
      m.n_fingers = h.n_fingers_best;
    }
  }
  return m;
}

/// One independent episode per seed on up to `workers` threads; members keep the
/// order of `config.seeds`.
inline FarmResult run_farm(const EpisodeConfig& config, int workers = 1,
                           std::vector<EpisodeRun>* runs = nullptr) {
  config.validate();
  std::vector<EpisodeRun> out(config.seeds.size());
  EpisodeConfig inner = config;
  inner.options.workers = 1;
  parallel_for(config.seeds.size(), workers, [&](std::size_t i) { out[i] = run_episode(inner, config.seeds[i]); });
  std::vector<FarmMember> members;
  members.reserve(out.size());
  for (const auto& r : out) members.push_back(summarize(r, config.budget));
  if (runs != nullptr) *runs = std::move(out);
  return FarmResult::aggregate(std::move(members));
}

}  // namespace mmt
