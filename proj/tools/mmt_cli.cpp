// mmt: experiment runner for the model-mediated teleoperation learning lab.
//
//   mmt learn     --scenario box_default --algo pi2 --seed 42
//   mmt reproduce fig6 --seeds 1,2,3,4,5 --out results
//   mmt validate  config/box_default.json
//
// Exit codes: 0 success, 1 usage or configuration error, 2 learning budget exhausted.

#include "mmt/config.hpp"
#include "mmt/harness.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifndef MMT_DEFAULT_CONFIG_DIR
#define MMT_DEFAULT_CONFIG_DIR "config"
#endif

namespace fs = std::filesystem;
using namespace mmt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitBudget = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::optional<std::string> algo;
  std::optional<int> updates;
  std::optional<int> rollouts;
  std::optional<double> sigma;
  std::optional<double> goal_sigma;
  std::optional<double> latency;
  std::optional<std::vector<double>> displacement;
  std::optional<double> uncertainty;
  std::optional<bool> goal_learning;
  int jobs = 1;

  void attach(CLI::App* app) {
    app->add_option("--algo", algo, "pi2 | power | enac");
    app->add_option("--updates", updates, "maximum number of policy updates");
    app->add_option("--rollouts", rollouts, "fresh roll-outs per update");
    app->add_option("--sigma", sigma, "initial exploration covariance scale");
    app->add_option("--goal-sigma", goal_sigma, "initial goal exploration std [m]");
    app->add_option("--latency", latency, "channel latency [s]");
    app->add_option("--displacement", displacement, "object displacement x,y [m]")->delimiter(',')->expected(2);
    app->add_option("--uncertainty", uncertainty, "unknown object offset magnitude [m]");
    app->add_option("--goal-learning", goal_learning, "explore the DMP goal as well (true/false)");
    app->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
  }

  void apply(Scenario& sc) const {
    EpisodeConfig& c = sc.config;
    if (algo) {
      const auto a = parse_algorithm(*algo);
      if (!a) throw UsageError("--algo: must be one of pi2, power, enac");
      select_algorithm(sc, *a);
    }
    if (updates) {
      c.budget.update_max = *updates;
      c.schedule.update_max = std::max(1, *updates);
    }
    if (rollouts) c.budget.rollouts_per_update = *rollouts;
    if (sigma) c.schedule.sigma_init = *sigma;
    if (goal_sigma) c.schedule.goal_sigma = *goal_sigma;
    if (latency) c.latency = *latency;
    if (displacement) c.displacement = Eigen::Vector2d((*displacement)[0], (*displacement)[1]);
    if (uncertainty) c.uncertainty = *uncertainty;
    if (goal_learning) c.options.goal_learning = *goal_learning;
  }
};

fs::path resolve_scenario(const std::string& name) {
  if (fs::exists(name)) return name;
  const fs::path dir = config_dir(MMT_DEFAULT_CONFIG_DIR);
  for (const fs::path candidate : {dir / name, dir / (name + ".json")}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw UsageError("scenario not found: " + name + " (searched ./ and " + dir.string() + ")");
}

Scenario load(const std::string& name, const Overrides& o) {
  Scenario sc = load_scenario(resolve_scenario(name));
  o.apply(sc);
  return sc;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--seeds: not an unsigned integer: " + item);
    }
  }
  if (seeds.empty()) throw UsageError("--seeds: the seed set must not be empty");
  return seeds;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      grid.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("--grid: not a number: " + item);
    }
  }
  if (grid.empty()) throw UsageError("--grid: must not be empty");
  return grid;
}

// ---------------------------------------------------------------------------
// learn

int cmd_learn(const std::string& scenario, std::uint64_t seed, const Overrides& o, const std::string& out) {
  Scenario sc = load(scenario, o);
  sc.config.seeds = {seed};
  sc.config.options.workers = o.jobs;
  sc.config.validate();

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw UsageError("cannot open output file: " + out);
    os = &file;
  }
  const EpisodeRun run = run_episode(sc.config, seed);
  for (const auto& r : run.state.history) *os << r.to_json().dump() << '\n';

  const auto& st = run.state;
  std::cerr << "scenario=" << sc.name << " algo=" << to_string(sc.config.algo) << " seed=" << seed
            << " delivered_at=" << run.delivered_at << "s initial_cost=" << st.initial.total_cost
            << " updates=" << st.update_index << " success=" << (st.success ? "yes" : "no");
  if (st.deployed) std::cerr << " deployed_cost=" << st.deployed->total_cost;
  std::cerr << '\n';
  return st.success ? kExitOk : kExitBudget;
}

// ---------------------------------------------------------------------------
// reproduce

struct StudyPlan {
  std::string scenario;
  std::vector<double> grid;
  int axis = 0;  // displacement axis; -1 for uncertainty magnitude
  std::vector<Algorithm> algos = {Algorithm::PI2, Algorithm::PoWER, Algorithm::eNAC};
};

const std::map<std::string, StudyPlan>& studies() {
  static const std::map<std::string, StudyPlan> table = {
      {"fig5", {"box_default", {0.4}, 0}},
      {"fig6", {"box_default", {0.0, 0.1, 0.2, 0.3, 0.4}, 0}},
      {"fig7", {"box_default", {0.0, 0.1, 0.2, 0.3, 0.4}, 1}},
      {"cylinder", {"cylinder", {0.0, 0.025, 0.05, 0.075, 0.1}, 0}},
      {"uncertainty", {"box_uncertainty", {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07}, -1, {Algorithm::PI2}}},
  };
  return table;
}

std::string study_names() {
  std::string s;
  for (const auto& [name, plan] : studies()) s += (s.empty() ? "" : ", ") + name;
  return s;
}

class CsvFile {
 public:
  CsvFile(const fs::path& path, const std::string& schema, const std::string& header) : os_(path) {
    if (!os_) throw UsageError("cannot write " + path.string());
    os_ << "# schema: " << schema << '\n' << header << '\n';
    os_.precision(10);
  }
  std::ofstream& operator*() { return os_; }

 private:
  std::ofstream os_;
};

int cmd_reproduce(const std::string& study, const std::string& seeds_text, const std::string& out_dir,
                  bool force, const std::string& grid_text, const std::string& scenario_override,
                  const Overrides& o) {
  const auto it = studies().find(study);
  if (it == studies().end()) throw UsageError("unknown study '" + study + "'; valid studies: " + study_names());
  StudyPlan plan = it->second;
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
  if (!grid_text.empty()) plan.grid = parse_grid(grid_text);
  if (o.algo) {
    const auto a = parse_algorithm(*o.algo);
    if (!a) throw UsageError("--algo: must be one of pi2, power, enac");
    plan.algos = {*a};
  }
  const std::string scenario = scenario_override.empty() ? plan.scenario : scenario_override;

  std::vector<std::string> outputs = {study + ".csv", study + "_summary.csv", study + "_farms.json"};
  if (study == "fig5") outputs.push_back("fig5_runs.csv");
  if (study == "uncertainty") outputs.push_back("uncertainty_trace.csv");
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  for (const auto& f : outputs) {
    if (fs::exists(dir / f) && !force) {
      throw UsageError("refusing to overwrite " + (dir / f).string() + " (pass --force)");
    }
  }

  // Validate every cell before running any of them.
  struct Cell {
    double value;
    Algorithm algo;
    Scenario sc;
  };
  std::vector<Cell> cells;
  for (double v : plan.grid) {
    for (Algorithm a : plan.algos) {
      Scenario sc = load(scenario, o);
      select_algorithm(sc, a);
      if (o.sigma) sc.config.schedule.sigma_init = *o.sigma;
      sc.config.seeds = seeds;
      if (plan.axis >= 0) {
        sc.config.displacement = Eigen::Vector2d::Zero();
        sc.config.displacement[plan.axis] = v;
      } else {
        sc.config.uncertainty = v;
        sc.config.options.goal_learning = o.goal_learning.value_or(true);
        sc.config.options.keep_trajectories = true;
      }
      if (study == "fig5") sc.config.options.stop_on_success = false;
      sc.config.validate();
      cells.push_back({v, a, std::move(sc)});
    }
  }

  const std::string axis_name = plan.axis == 0 ? "displacement_x" : plan.axis == 1 ? "displacement_y" : "magnitude";
  CsvFile main(dir / outputs[0], "mmt." + study + ".v1",
               study == "fig5" ? "update,algo,mean_cost" : axis_name + ",algo,seed,updates,success");
  CsvFile summary(dir / outputs[1], "mmt." + study + "_summary.v1",
                  axis_name + ",algo,median,q1,q3,success_rate");
  std::optional<CsvFile> runs_csv;
  std::optional<CsvFile> trace_csv;
  if (study == "fig5") runs_csv.emplace(dir / "fig5_runs.csv", "mmt.fig5_runs.v1", "update,algo,seed,best_cost");
  if (study == "uncertainty") {
    trace_csv.emplace(dir / "uncertainty_trace.csv", "mmt.uncertainty_trace.v1", "magnitude,seed,t,x,y,z");
  }
  nlohmann::json farms = nlohmann::json::array();

  for (const auto& cell : cells) {
    std::vector<EpisodeRun> runs;
    const FarmResult farm = run_farm(cell.sc.config, o.jobs, &runs);
    const std::string algo = to_string(cell.algo);
    farms.push_back({{axis_name, cell.value}, {"algo", algo}, {"farm", farm.to_json()}});
    *summary << cell.value << ',' << algo << ',' << farm.median << ',' << farm.q1 << ',' << farm.q3 << ','
             << farm.success_rate << '\n';

    if (study == "fig5") {
      const int n_updates = cell.sc.config.budget.update_max;
      for (int u = 0; u <= n_updates; ++u) {
        double sum = 0.0;
        for (const auto& r : runs) {
          const double c = u == 0 ? r.state.initial.total_cost
                                  : r.state.history.at(static_cast<std::size_t>(u - 1)).best_cost;
          sum += c;
          **runs_csv << u << ',' << algo << ',' << r.seed << ',' << c << '\n';
        }
        *main << u << ',' << algo << ',' << sum / static_cast<double>(runs.size()) << '\n';
      }
    } else {
      for (const auto& m : farm.members) {
        *main << cell.value << ',' << algo << ',' << m.seed << ',' << m.updates << ',' << (m.success ? 1 : 0)
              << '\n';
      }
    }
    if (trace_csv) {
      for (const auto& r : runs) {
        const Rollout& shown = r.state.deployed ? *r.state.deployed : r.state.initial;
        if (!shown.trajectory) continue;
        for (const auto& s : shown.trajectory->samples()) {
          **trace_csv << cell.value << ',' << r.seed << ',' << s.t << ',' << s.pose[0] << ',' << s.pose[1] << ','
                      << s.pose[2] << '\n';
        }
      }
    }
    std::cerr << study << ' ' << axis_name << '=' << cell.value << ' ' << algo << ": median=" << farm.median
              << " q1=" << farm.q1 << " q3=" << farm.q3 << " success_rate=" << farm.success_rate << '\n';
  }
  std::ofstream(dir / outputs[2]) << farms.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// validate

int cmd_validate(const std::string& path) {
  const Scenario sc = load_scenario(resolve_scenario(path));
  sc.config.validate();
  std::cout << "ok: " << sc.name << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-mediated teleoperation learning lab"};
  app.require_subcommand(1);

  Overrides learn_o, repro_o;
  std::string learn_scenario = "box_default", learn_out;
  std::uint64_t learn_seed = 42;
  auto* learn = app.add_subcommand("learn", "run one avatar episode end to end");
  learn->add_option("--scenario", learn_scenario, "scenario file or name in the config directory");
  learn->add_option("--seed", learn_seed, "random seed");
  learn->add_option("--out", learn_out, "write EpisodeReport JSON lines here instead of stdout");
  learn_o.attach(learn);

  std::string study, seeds_text = "1,2,3,4,5", out_dir = "results", grid_text, repro_scenario;
  bool force = false;
  auto* repro = app.add_subcommand("reproduce", "run one of the canned experiment studies");
  repro->add_option("study", study, "fig5 | fig6 | fig7 | cylinder | uncertainty")->required();
  repro->add_option("--seeds", seeds_text, "comma-separated seed list");
  repro->add_option("--out", out_dir, "output directory");
  repro->add_flag("--force", force, "overwrite existing result files");
  repro->add_option("--grid", grid_text, "comma-separated displacement or magnitude grid");
  repro->add_option("--scenario", repro_scenario, "override the study's scenario");
  repro_o.attach(repro);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a scenario file without running it");
  validate->add_option("scenario", validate_path, "scenario file or name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*learn) return cmd_learn(learn_scenario, learn_seed, learn_o, learn_out);
    if (*repro) return cmd_reproduce(study, seeds_text, out_dir, force, grid_text, repro_scenario, repro_o);
    if (*validate) return cmd_validate(validate_path);
  } catch (const InvariantError& e) {
    std::cerr << "invalid " << e.type_name() << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
