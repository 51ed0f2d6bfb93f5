#pragma once

// Scenario files (JSON) <-> EpisodeConfig. Every parse or invariant failure is
// reported as an InvariantError naming the offending type or field.

#include "mmt/harness.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace mmt {

struct Scenario {
  std::string name;
  EpisodeConfig config;
  std::map<Algorithm, double> sigma_init = {
      {Algorithm::PI2, 300.0}, {Algorithm::PoWER, 300.0}, {Algorithm::eNAC, 0.01}};
};

namespace detail {

template <class T>
T field(const nlohmann::json& obj, const std::string& key, const std::string& path, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvariantError(path + "." + key, "wrong type");
  }
}

template <int N>
Eigen::Matrix<double, N, 1> vec_field(const nlohmann::json& obj, const std::string& key, const std::string& path,
                                      const Eigen::Matrix<double, N, 1>& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != static_cast<std::size_t>(N)) {
    throw InvariantError(path + "." + key, "expected an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number()) throw InvariantError(path + "." + key, "expected numbers");
    out[i] = v[static_cast<std::size_t>(i)].get<double>();
  }
  return out;
}

inline const nlohmann::json& section(const nlohmann::json& root, const std::string& key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!root.contains(key)) return empty;
  if (!root.at(key).is_object()) throw InvariantError(key, "expected an object");
  return root.at(key);
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& root) {
  using detail::field;
  using detail::section;
  using detail::vec_field;
  if (!root.is_object()) throw InvariantError("Scenario", "top level must be a JSON object");
  Scenario sc;
  EpisodeConfig& c = sc.config;
  sc.name = field<std::string>(root, "name", "Scenario", "unnamed");

  const auto& obj = section(root, "object");
  const auto shape = field<std::string>(obj, "shape", "object", "box");
  if (shape == "box") {
    c.scene.object.shape = Box{vec_field<3>(obj, "dims", "object", std::get<Box>(c.scene.object.shape).dims)};
  } else if (shape == "cylinder") {
    c.scene.object.shape = Cylinder{field<double>(obj, "radius", "object", 0.012),
                                    field<double>(obj, "height", "object", 0.10)};
  } else {
    throw InvariantError("object.shape", "must be \"box\" or \"cylinder\"");
  }
  const Vec6 pose = vec_field<6>(obj, "pose", "object", c.scene.object.true_pose);
  c.scene.object.true_pose = pose;
  c.scene.object.believed_pose = pose;
  c.scene.object.diaphragm_scale = field<double>(obj, "diaphragm_scale", "object", kDefaultDiaphragmScale);
  c.scene.object.diaphragm_override = field<bool>(obj, "diaphragm_override", "object", false);
  c.scene.object.max_fingers = field<int>(obj, "max_fingers", "object", kFingertips);

  c.scene.table_height = field<double>(root, "table_height", "Scenario", 0.0);
  const auto& ws = section(root, "workspace");
  c.scene.workspace.min = vec_field<3>(ws, "min", "workspace", c.scene.workspace.min);
  c.scene.workspace.max = vec_field<3>(ws, "max", "workspace", c.scene.workspace.max);

  const auto& hand = section(root, "hand");
  if (hand.contains("fingertips")) {
    const auto& tips = hand.at("fingertips");
    if (!tips.is_array()) throw InvariantError("hand.fingertips", "expected an array of 3-vectors");
    c.hand.fingertip_offsets.clear();
    for (std::size_t i = 0; i < tips.size(); ++i) {
      nlohmann::json wrap = {{"tip", tips[i]}};
      c.hand.fingertip_offsets.push_back(
          vec_field<3>(wrap, "tip", "hand.fingertips[" + std::to_string(i) + "]", Vec3::Zero()));
    }
  }
  c.hand.max_wrist_speed = field<double>(hand, "max_wrist_speed", "hand", c.hand.max_wrist_speed);

  const auto& demo = section(root, "demo");
  const auto kind = field<std::string>(demo, "kind", "demo", "min_jerk_reach");
  if (kind == "min_jerk_reach") {
    c.demo_kind = DemoKind::MinJerkReach;
  } else if (kind == "arc_reach") {
    c.demo_kind = DemoKind::ArcReach;
  } else {
    throw InvariantError("demo.kind", "must be \"min_jerk_reach\" or \"arc_reach\"");
  }
  c.home_pose = vec_field<6>(demo, "home", "demo", c.home_pose);
  c.approach = vec_field<3>(demo, "approach", "demo", c.approach);
  c.arc_height = field<double>(demo, "arc_height", "demo", c.arc_height);
  c.demo_duration = field<double>(demo, "duration", "demo", c.demo_duration);
  c.dt = field<double>(demo, "dt", "demo", c.dt);
  c.n_basis = field<int>(demo, "n_basis", "demo", c.n_basis);

  const auto& ep = section(root, "episode");
  c.displacement = vec_field<2>(ep, "displacement", "episode", c.displacement);
  c.uncertainty = field<double>(ep, "uncertainty", "episode", c.uncertainty);
  c.latency = field<double>(ep, "latency", "episode", c.latency);
  c.jitter = field<double>(ep, "jitter", "episode", c.jitter);

  const auto& learn = section(root, "learning");
  const auto algo = parse_algorithm(field<std::string>(learn, "algo", "learning", "pi2"));
  if (!algo) throw InvariantError("learning.algo", "must be one of pi2, power, enac");
  c.algo = *algo;
  c.budget.update_max = field<int>(learn, "update_max", "learning", c.budget.update_max);
  c.budget.rollouts_per_update = field<int>(learn, "rollouts", "learning", c.budget.rollouts_per_update);
  c.budget.elites = field<int>(learn, "elites", "learning", c.budget.elites);
  if (learn.contains("sigma")) {
    const auto& s = learn.at("sigma");
    if (!s.is_object()) throw InvariantError("learning.sigma", "expected an object keyed by algorithm");
    for (auto it = s.begin(); it != s.end(); ++it) {
      const auto a = parse_algorithm(it.key());
      if (!a || !it.value().is_number()) throw InvariantError("learning.sigma." + it.key(), "unknown algorithm or non-number");
      sc.sigma_init[*a] = it.value().get<double>();
    }
  }
  c.schedule.goal_sigma = field<double>(learn, "goal_sigma", "learning", 0.04);
  c.schedule.floor = field<double>(learn, "sigma_floor", "learning", c.schedule.floor);
  c.options.goal_learning = field<bool>(learn, "goal_learning", "learning", false);
  c.options.stop_on_success = field<bool>(learn, "stop_on_success", "learning", true);
  c.options.pi2_h = field<double>(learn, "h", "learning", c.options.pi2_h);
  c.options.enac_alpha = field<double>(learn, "alpha", "learning", c.options.enac_alpha);
  c.options.enac_ridge = field<double>(learn, "ridge", "learning", c.options.enac_ridge);
  c.cost.R_scale = field<double>(learn, "R_scale", "learning", c.cost.R_scale);

  if (root.contains("seeds")) {
    try {
      c.seeds = root.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception&) {
      throw InvariantError("seeds", "expected an array of non-negative integers");
    }
  }
  c.schedule.sigma_init = sc.sigma_init.at(c.algo);
  c.schedule.update_max = std::max(1, c.budget.update_max);
  return sc;
}

/// Reapplies the per-algorithm exploration default after an algorithm change.
inline void select_algorithm(Scenario& sc, Algorithm a) {
  sc.config.algo = a;
  sc.config.schedule.sigma_init = sc.sigma_init.at(a);
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path.string());
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvariantError("Scenario", std::string("malformed JSON: ") + e.what());
  }
  return scenario_from_json(root);
}

/// Default scenario directory: $MMT_CONFIG_DIR, else the compiled-in fallback.
inline std::filesystem::path config_dir(const char* fallback) {
  if (const char* env = std::getenv("MMT_CONFIG_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

}  // namespace mmt
