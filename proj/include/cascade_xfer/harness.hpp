#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cascade_xfer/bounds.hpp"
#include "cascade_xfer/cascade_mdp.hpp"
#include "cascade_xfer/exact_oracle.hpp"
#include "cascade_xfer/policy.hpp"
#include "cascade_xfer/quadrotor.hpp"

namespace cxfer {

/// Absolute slack when comparing an exact quantity with its bound.
inline constexpr double kBoundSlack = 1e-12;

struct TabularSettings {
  std::size_t instances = 100;
  std::size_t tv_horizon = 20;
  std::size_t delta_p_horizon = 6;
  double vi_tol = 1e-12;
  std::size_t max_retries = 50;
  GeneratorParams generator;
};

struct ExperimentConfig {
  std::string mode = "quad-sweep";  ///< tabular-verify | quad-sweep | quad-figures
  std::vector<double> kp_list{1.0, 2.0, 5.0, 10.0, 20.0, 60.0};
  std::size_t trials = 100;
  std::size_t horizon = 400;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  unsigned workers = 1;
  SeriesVariant bound_variant = SeriesVariant::kConservative;
  ActMode eval_mode = ActMode::kMean;
  std::string policy_path;
  TabularSettings tabular;
  TrainConfig train;
  EnvParams env;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Tabular verification

struct InstanceRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::size_t s_count = 0, x_count = 0, a_count = 0, u_count = 0;
  BoundConstants constants;
  std::vector<double> tv_exact;         ///< TV(1..T), policy-expected
  std::vector<double> tv_bound;         ///< prop1 bound for TV(1..T)
  std::vector<double> tv_history;       ///< TV(1..H), prefix-conditioned
  std::vector<double> tv_marginal_sup;  ///< TV(1..T), diagnostic convention
  std::vector<double> delta_p;          ///< dP(0..H)
  std::vector<double> delta_p_bound;
  double v_r = 0.0;
  double v_k = 0.0;
  double gap = 0.0;
  double thm2_as_printed = 0.0;
  double thm2_conservative = 0.0;
  double min_tv_margin = 0.0;
  double min_delta_p_margin = 0.0;
  double thm2_margin = 0.0;
  std::vector<std::string> violations;
  nlohmann::json dump;  ///< full instance, filled only when violations exist

  double thm2_bound() const { return std::max(thm2_as_printed, thm2_conservative); }
};

/// Checks every inequality on one certified instance.
InstanceRecord verify_instance(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                               const BoundConstants& constants, std::size_t tv_horizon,
                               std::size_t delta_p_horizon);

struct TabularReport {
  std::vector<InstanceRecord> instances;
  std::size_t violation_count = 0;
  /// Instances where the marginal-sup TV exceeded the TV bound (diagnostic).
  std::size_t marginal_sup_exceedances = 0;
  bool pass = false;
};

TabularReport run_tabular_verify(const ExperimentConfig& cfg);
nlohmann::json to_json(const InstanceRecord& rec);
nlohmann::json to_json(const TabularReport& report);

// ---------------------------------------------------------------------------
// Quadrotor sweep

struct SeriesStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct KpRow {
  double kp = 0.0;
  double mean_vk = 0.0;
  double mean_vr = 0.0;
  double rel_gap = 0.0;
  double std_error = 0.0;  ///< of rel_gap, from the paired differences
  SeriesStats distance;     ///< full system, trials still running at t
  SeriesStats theta_error;  ///< |theta_t - theta*_t|, full system
  double theta_error_time_avg = 0.0;
  std::vector<double> example_theta;       ///< trial 0, full system
  std::vector<double> example_theta_star;  ///< trial 0 commands
  std::vector<double> example_reduced_theta;
  BoundConstants constants;
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  double thm2_bound = 0.0;
  double truncation_bound = 0.0;
  std::size_t boundary_exits = 0;
  std::size_t targets_reached = 0;
};

struct SweepResult {
  std::vector<KpRow> rows;
  SeriesStats reduced_distance;
  std::size_t reduced_targets_reached = 0;
  std::vector<std::uint64_t> trial_seeds;
  bool trend_ok = false;
  std::string trend_detail;
};

/// Relative gaps nonincreasing in kp up to n_se combined standard errors
/// (checked over every pair of the sorted kp list).
bool check_gap_trend(const SweepResult& result, double n_se, std::string* detail = nullptr);

SweepResult run_quad_sweep(const ExperimentConfig& cfg, const PolicySpec& policy);

nlohmann::json to_json(const SweepResult& result);

/// Writes fig2_gap_vs_kp.csv, fig3_distance.csv, fig4_theta_error.csv,
/// fig5_theta_traj.csv and manifest.json into outdir; returns the paths.
std::vector<std::filesystem::path> emit_figures(const SweepResult& result, const ExperimentConfig& cfg,
                                                const PolicySpec& policy,
                                                const std::filesystem::path& outdir);

}  // namespace cxfer
