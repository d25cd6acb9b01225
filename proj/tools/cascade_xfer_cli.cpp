// Command-line driver: verify-tabular, train, sweep, figures.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cascade_xfer/harness.hpp"
#include "cascade_xfer/policy.hpp"
#include "cascade_xfer/quadrotor.hpp"

namespace fs = std::filesystem;
using namespace cxfer;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<double> kp;
  std::optional<unsigned> workers;
  std::optional<std::size_t> trials;
  std::string policy_path;
};

ExperimentConfig load_config(const Overrides& o, const std::string& mode) {
  ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw std::runtime_error("cannot open config " + o.config_path);
    cfg = experiment_config_from_json(nlohmann::json::parse(is));
  }
  cfg.mode = mode;
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (!o.kp.empty()) cfg.kp_list = o.kp;
  if (o.workers) cfg.workers = *o.workers;
  if (o.trials) cfg.trials = *o.trials;
  if (!o.policy_path.empty()) cfg.policy_path = o.policy_path;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

PolicySpec policy_for(const ExperimentConfig& cfg) {
  if (!cfg.policy_path.empty()) {
    std::ifstream is(cfg.policy_path);
    if (!is) throw std::runtime_error("cannot open policy " + cfg.policy_path);
    return policy_from_json(nlohmann::json::parse(is));
  }
  EnvParams env = cfg.env;
  env.kp = 0.0;
  const TrainResult tr = obtain_policy(ReducedQuadrotorEnv(env), cfg.train, cfg.workers);
  write_json(fs::path(cfg.out_dir) / "policy.json", to_json(tr.policy));
  return tr.policy;
}

int cmd_verify(const ExperimentConfig& cfg) {
  const TabularReport report = run_tabular_verify(cfg);
  write_json(fs::path(cfg.out_dir) / "tabular_report.json", to_json(report));
  std::cout << "tabular-verify: " << report.instances.size() << " instances, " << report.violation_count
            << " violations, " << report.marginal_sup_exceedances
            << " marginal-sup exceedances (diagnostic)\n";
  return report.pass ? 0 : 1;
}

int cmd_train(const ExperimentConfig& cfg) {
  EnvParams env = cfg.env;
  env.kp = 0.0;
  const TrainResult tr = obtain_policy(ReducedQuadrotorEnv(env), cfg.train, cfg.workers);
  const fs::path out(cfg.out_dir);
  write_json(out / "policy.json", to_json(tr.policy));
  std::ofstream curve(out / "train_curve.csv", std::ios::binary);
  curve << "iteration,validation_return\n";
  for (std::size_t i = 0; i < tr.curve.size(); ++i) curve << i << ',' << format_g17(tr.curve[i]) << '\n';
  std::cout << "train: validation return " << tr.validation_return << '\n';
  return std::isfinite(tr.validation_return) ? 0 : 1;
}

int cmd_sweep(const ExperimentConfig& cfg, bool figures) {
  const PolicySpec policy = policy_for(cfg);
  const SweepResult result = run_quad_sweep(cfg, policy);
  const fs::path out(cfg.out_dir);
  write_json(out / "sweep.json", to_json(result));
  if (figures) emit_figures(result, cfg, policy, out);
  for (const auto& r : result.rows) {
    std::cout << "kp=" << r.kp << " rel_gap=" << r.rel_gap << " stderr=" << r.std_error
              << " theta_err=" << r.theta_error_time_avg << '\n';
  }
  std::cout << "trend: " << result.trend_detail << '\n';
  return result.trend_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascade-control transfer experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  std::uint64_t seed = 0;
  std::string out;
  unsigned workers = 1;
  std::size_t trials = 0;
  app.add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "base seed");
  auto* out_opt = app.add_option("--out", out, "output directory");
  app.add_option("--kp", o.kp, "proportional gains (repeatable)");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  auto* trials_opt = app.add_option("--trials", trials, "trials per gain")->check(CLI::PositiveNumber);
  app.add_option("--policy", o.policy_path, "policy-v1 JSON to evaluate instead of training");

  auto* verify = app.add_subcommand("verify-tabular", "bound verification on random tabular instances");
  auto* train = app.add_subcommand("train", "train a policy on the reduced model");
  auto* sweep = app.add_subcommand("sweep", "kp sweep with Monte Carlo value estimates");
  auto* figures = app.add_subcommand("figures", "kp sweep plus figure CSVs and manifest");
  CLI11_PARSE(app, argc, argv);

  if (*seed_opt) o.seed = seed;
  if (*out_opt) o.out = out;
  if (*workers_opt) o.workers = workers;
  if (*trials_opt) o.trials = trials;

  try {
    if (*verify) return cmd_verify(load_config(o, "tabular-verify"));
    if (*train) return cmd_train(load_config(o, "quad-sweep"));
    if (*sweep) return cmd_sweep(load_config(o, "quad-sweep"), false);
    if (*figures) return cmd_sweep(load_config(o, "quad-figures"), true);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
