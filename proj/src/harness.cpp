#include "cascade_xfer/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cascade_xfer/parallel.hpp"
#include "cascade_xfer/rng.hpp"

namespace cxfer {
namespace {

constexpr std::uint64_t kTabularSalt = 0x7461627546ULL;
constexpr std::uint64_t kTrialSalt = 0x7175616452ULL;

nlohmann::json generator_to_json(const GeneratorParams& g) {
  return {{"max_s", g.max_s},       {"max_x", g.max_x},       {"max_a", g.max_a},
          {"max_dim", g.max_dim},   {"gamma_lo", g.gamma_lo}, {"gamma_hi", g.gamma_hi},
          {"reward_bound", g.reward_bound}, {"reward_ignores_x", g.reward_ignores_x}};
}

GeneratorParams generator_from_json(const nlohmann::json& j) {
  GeneratorParams g;
  g.max_s = j.value("max_s", g.max_s);
  g.max_x = j.value("max_x", g.max_x);
  g.max_a = j.value("max_a", g.max_a);
  g.max_dim = j.value("max_dim", g.max_dim);
  g.gamma_lo = j.value("gamma_lo", g.gamma_lo);
  g.gamma_hi = j.value("gamma_hi", g.gamma_hi);
  g.reward_bound = j.value("reward_bound", g.reward_bound);
  g.reward_ignores_x = j.value("reward_ignores_x", g.reward_ignores_x);
  return g;
}

nlohmann::json env_to_json(const EnvParams& p) {
  return {{"mass", p.mass},         {"g", p.g},
          {"dt", p.dt},             {"target_y", p.target_y},
          {"target_z", p.target_z}, {"target_tol", p.target_tol},
          {"boundary_penalty", p.boundary_penalty}, {"gamma", p.gamma},
          {"arena_lo", p.arena_lo}, {"arena_hi", p.arena_hi},
          {"max_steps", p.max_steps}};
}

EnvParams env_from_json(const nlohmann::json& j) {
  EnvParams p;
  p.mass = j.value("mass", p.mass);
  p.g = j.value("g", p.g);
  p.dt = j.value("dt", p.dt);
  p.target_y = j.value("target_y", p.target_y);
  p.target_z = j.value("target_z", p.target_z);
  p.target_tol = j.value("target_tol", p.target_tol);
  p.boundary_penalty = j.value("boundary_penalty", p.boundary_penalty);
  p.gamma = j.value("gamma", p.gamma);
  p.arena_lo = j.value("arena_lo", p.arena_lo);
  p.arena_hi = j.value("arena_hi", p.arena_hi);
  p.max_steps = j.value("max_steps", p.max_steps);
  return p;
}

nlohmann::json constants_to_json(const BoundConstants& c) {
  return {{"B", c.B},         {"L", c.L},   {"gamma", c.gamma}, {"alpha", c.alpha},
          {"beta", c.beta},   {"C", c.C},   {"rho", c.rho},     {"e0", c.e0},
          {"lambda_min", c.lambda_min}, {"lambda_max", c.lambda_max}};
}

bool exceeds(double exact, double bound) {
  return exact > bound + kBoundSlack * std::max(1.0, std::abs(bound));
}

SeriesStats series_stats(const std::vector<std::vector<double>>& per_trial) {
  std::size_t len = 0;
  for (const auto& v : per_trial) len = std::max(len, v.size());
  SeriesStats out;
  out.mean.assign(len, 0.0);
  out.std.assign(len, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& v : per_trial) {
      if (t >= v.size()) continue;
      sum += v[t];
      ++n;
    }
    const double mean = sum / static_cast<double>(n);
    for (const auto& v : per_trial)
      if (t < v.size()) sq += (v[t] - mean) * (v[t] - mean);
    out.mean[t] = mean;
    out.std[t] = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
  }
  return out;
}

double distance_to_target(const TrajectoryRow& r, const EnvParams& p) {
  return std::hypot(r.y - p.target_y, r.z - p.target_z);
}

/// Largest L1 change of the reduced next state per unit attitude, by central
/// differences at every logged (state, thrust, attitude command).
double finite_difference_lipschitz(const std::vector<TrajectoryLog>& logs, const EnvParams& p) {
  constexpr double h = 1e-6;
  double best = 0.0;
  for (const auto& log : logs) {
    for (const auto& r : log.rows) {
      const QuadrotorState s{r.y, r.y_dot, r.z, r.z_dot};
      const auto up = step_reduced(s, {r.thrust, r.theta_cmd + h}, p);
      const auto dn = step_reduced(s, {r.thrust, r.theta_cmd - h}, p);
      const double l1 = std::abs(up.y - dn.y) + std::abs(up.y_dot - dn.y_dot) + std::abs(up.z - dn.z) +
                        std::abs(up.z_dot - dn.z_dot);
      best = std::max(best, l1 / (2.0 * h));
    }
  }
  return best;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (mode != "tabular-verify" && mode != "quad-sweep" && mode != "quad-figures")
    throw std::invalid_argument("config: unknown mode '" + mode + "'");
  if (kp_list.empty()) throw std::invalid_argument("config: kp_list must be nonempty");
  for (double kp : kp_list)
    if (!(kp >= 0.0) || !std::isfinite(kp)) throw std::invalid_argument("config: kp entries must be >= 0");
  if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
  if (horizon < 1 || horizon > env.max_steps)
    throw std::invalid_argument("config: horizon must lie in [1, env.max_steps]");
  if (tabular.instances < 1) throw std::invalid_argument("config: tabular.instances must be >= 1");
  if (tabular.delta_p_horizon > kDeltaPHorizonCap)
    throw std::invalid_argument("config: tabular.delta_p_horizon exceeds the enumeration cap");
  if (tabular.generator.max_s > 5 || tabular.generator.max_x > 4 || tabular.generator.max_a > 3)
    throw std::invalid_argument("config: generator caps are |S| <= 5, |X| <= 4, |A| <= 3");
  env.validate();
  train.validate();
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return {{"mode", cfg.mode},
          {"kp_list", cfg.kp_list},
          {"trials", cfg.trials},
          {"horizon", cfg.horizon},
          {"seed", cfg.seed},
          {"out_dir", cfg.out_dir},
          {"bound_variant", std::string(to_string(cfg.bound_variant))},
          {"eval_mode", cfg.eval_mode == ActMode::kMean ? "mean" : "sample"},
          {"policy_path", cfg.policy_path},
          {"tabular",
           {{"instances", cfg.tabular.instances},
            {"tv_horizon", cfg.tabular.tv_horizon},
            {"delta_p_horizon", cfg.tabular.delta_p_horizon},
            {"vi_tol", cfg.tabular.vi_tol},
            {"max_retries", cfg.tabular.max_retries},
            {"generator", generator_to_json(cfg.tabular.generator)}}},
          {"train", to_json(cfg.train)},
          {"env", env_to_json(cfg.env)}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  cfg.mode = j.value("mode", cfg.mode);
  if (j.contains("kp_list")) cfg.kp_list = j.at("kp_list").get<std::vector<double>>();
  cfg.trials = j.value("trials", cfg.trials);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.workers = j.value("workers", cfg.workers);
  if (j.contains("bound_variant"))
    cfg.bound_variant = series_variant_from_string(j.at("bound_variant").get<std::string>());
  if (j.contains("eval_mode")) {
    const auto m = j.at("eval_mode").get<std::string>();
    if (m == "mean") cfg.eval_mode = ActMode::kMean;
    else if (m == "sample") cfg.eval_mode = ActMode::kSample;
    else throw std::invalid_argument("config: eval_mode must be mean or sample");
  }
  cfg.policy_path = j.value("policy_path", cfg.policy_path);
  if (j.contains("tabular")) {
    const auto& t = j.at("tabular");
    cfg.tabular.instances = t.value("instances", cfg.tabular.instances);
    cfg.tabular.tv_horizon = t.value("tv_horizon", cfg.tabular.tv_horizon);
    cfg.tabular.delta_p_horizon = t.value("delta_p_horizon", cfg.tabular.delta_p_horizon);
    cfg.tabular.vi_tol = t.value("vi_tol", cfg.tabular.vi_tol);
    cfg.tabular.max_retries = t.value("max_retries", cfg.tabular.max_retries);
    if (t.contains("generator")) cfg.tabular.generator = generator_from_json(t.at("generator"));
  }
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  if (j.contains("env")) cfg.env = env_from_json(j.at("env"));
  return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("out_dir");  // where results go does not change what they are
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Tabular verification

InstanceRecord verify_instance(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                               const BoundConstants& constants, std::size_t tv_horizon,
                               std::size_t delta_p_horizon) {
  const auto& m = cl.base;
  InstanceRecord rec;
  rec.s_count = m.s_count;
  rec.x_count = m.x_count;
  rec.a_count = m.a_count;
  rec.u_count = m.u_count;
  rec.constants = constants;

  rec.tv_exact = exact_tv_series(cl, policy, tv_horizon, TvConvention::kPolicyExpected);
  rec.tv_marginal_sup = exact_tv_series(cl, policy, tv_horizon, TvConvention::kMarginalSup);
  rec.min_tv_margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t <= tv_horizon; ++t) {
    // TV(t) is the transition t-1 -> t, bounded by the TV bound at t-1.
    const double bound = prop1_tv_bound(constants, t - 1);
    rec.tv_bound.push_back(bound);
    rec.min_tv_margin = std::min(rec.min_tv_margin, bound - rec.tv_exact[t - 1]);
    if (exceeds(rec.tv_exact[t - 1], bound))
      rec.violations.push_back("tv(" + std::to_string(t) + ")=" + format_g17(rec.tv_exact[t - 1]) +
                               " > " + format_g17(bound));
  }

  const auto disc = trajectory_discrepancy(cl, policy, delta_p_horizon);
  rec.delta_p = disc.delta_p;
  rec.tv_history.assign(disc.tv_history.begin() + 1, disc.tv_history.end());
  rec.min_delta_p_margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t <= delta_p_horizon; ++t) {
    const double bound = lemma1_delta_p_bound(constants, t);
    rec.delta_p_bound.push_back(bound);
    rec.min_delta_p_margin = std::min(rec.min_delta_p_margin, bound - rec.delta_p[t]);
    if (exceeds(rec.delta_p[t], bound))
      rec.violations.push_back("delta_p(" + std::to_string(t) + ")=" + format_g17(rec.delta_p[t]) +
                               " > " + format_g17(bound));
  }

  rec.v_r = initial_value(m, evaluate_policy_reduced(m, policy));
  rec.v_k = evaluate_policy_closed_loop(cl, policy).value;
  rec.gap = std::abs(rec.v_k - rec.v_r);
  rec.thm2_as_printed = thm2_value_gap_bound(constants, SeriesVariant::kAsPrinted);
  rec.thm2_conservative = thm2_value_gap_bound(constants, SeriesVariant::kConservative);
  // |V_K - V_R| itself is checked; it implies the (1 - gamma)-scaled form.
  rec.thm2_margin = rec.thm2_bound() - rec.gap;
  if (exceeds(rec.gap, rec.thm2_bound()))
    rec.violations.push_back("gap=" + format_g17(rec.gap) + " > " + format_g17(rec.thm2_bound()));

  if (!rec.violations.empty()) {
    rec.dump = {{"mdp", to_json(m)}, {"controller", to_json(cl.controller)}, {"policy", policy.table}};
  }
  return rec;
}

TabularReport run_tabular_verify(const ExperimentConfig& cfg) {
  const auto& ts = cfg.tabular;
  TabularReport report;
  report.instances.resize(ts.instances);
  parallel_for(ts.instances, cfg.workers, [&](std::size_t i) {
    std::string last_reason = "no attempt";
    for (std::size_t attempt = 0; attempt < ts.max_retries; ++attempt) {
      const std::uint64_t seed = stream_seed(cfg.seed, i * ts.max_retries + attempt, kTabularSalt);
      Rng rng(seed);
      const RandomInstance inst = generate_instance(ts.generator, rng);
      const ClosedLoopMdp cl = build_closed_loop(inst.mdp, inst.controller);
      const auto vi = value_iteration(inst.mdp, ts.vi_tol);
      const Certificate cert = certify(cl, vi.policy);
      if (!cert.valid) {
        last_reason = cert.reason;
        continue;
      }
      try {
        InstanceRecord rec = verify_instance(cl, vi.policy, cert.constants, ts.tv_horizon, ts.delta_p_horizon);
        rec.index = i;
        rec.seed = seed;
        report.instances[i] = std::move(rec);
        return;
      } catch (const std::length_error& e) {
        last_reason = e.what();
      }
    }
    throw std::runtime_error("tabular-verify: instance " + std::to_string(i) + " failed after " +
                             std::to_string(ts.max_retries) + " retries: " + last_reason);
  });
  for (const auto& rec : report.instances) {
    report.violation_count += rec.violations.size();
    for (std::size_t t = 0; t < rec.tv_marginal_sup.size(); ++t) {
      if (exceeds(rec.tv_marginal_sup[t], rec.tv_bound[t])) {
        ++report.marginal_sup_exceedances;
        break;
      }
    }
  }
  report.pass = report.violation_count == 0;
  return report;
}

nlohmann::json to_json(const InstanceRecord& rec) {
  nlohmann::json per_t = nlohmann::json::array();
  const std::size_t len = std::max(rec.tv_exact.size(), rec.delta_p.size());
  for (std::size_t t = 0; t < len + 1; ++t) {
    nlohmann::json row{{"t", t}};
    if (t >= 1 && t <= rec.tv_exact.size()) {
      row["tv_exact"] = rec.tv_exact[t - 1];
      row["tv_bound"] = rec.tv_bound[t - 1];
      row["tv_marginal_sup"] = rec.tv_marginal_sup[t - 1];
    }
    if (t >= 1 && t <= rec.tv_history.size()) row["tv_history"] = rec.tv_history[t - 1];
    if (t < rec.delta_p.size()) {
      row["delta_p_exact"] = rec.delta_p[t];
      row["delta_p_bound"] = rec.delta_p_bound[t];
    }
    if (row.size() > 1) per_t.push_back(std::move(row));
  }
  nlohmann::json j{{"index", rec.index},
                   {"seed", rec.seed},
                   {"dims", {{"s", rec.s_count}, {"x", rec.x_count}, {"a", rec.a_count}, {"u", rec.u_count}}},
                   {"constants", constants_to_json(rec.constants)},
                   {"per_t", per_t},
                   {"v_r", rec.v_r},
                   {"v_k", rec.v_k},
                   {"gap", rec.gap},
                   {"thm2_bound", rec.thm2_bound()},
                   {"thm2_as_printed", rec.thm2_as_printed},
                   {"thm2_conservative", rec.thm2_conservative},
                   {"margins",
                    {{"tv", rec.min_tv_margin}, {"delta_p", rec.min_delta_p_margin}, {"thm2", rec.thm2_margin}}},
                   {"violations", rec.violations}};
  if (!rec.dump.is_null()) j["instance_dump"] = rec.dump;
  return j;
}

nlohmann::json to_json(const TabularReport& report) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& r : report.instances) inst.push_back(to_json(r));
  return {{"instances", inst},
          {"violation_count", report.violation_count},
          {"marginal_sup_exceedances", report.marginal_sup_exceedances},
          {"pass", report.pass}};
}

// ---------------------------------------------------------------------------
// Quadrotor sweep

bool check_gap_trend(const SweepResult& result, double n_se, std::string* detail) {
  std::vector<const KpRow*> rows;
  for (const auto& r : result.rows) rows.push_back(&r);
  std::stable_sort(rows.begin(), rows.end(), [](const KpRow* a, const KpRow* b) { return a->kp < b->kp; });
  bool ok = true;
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double tol = n_se * std::hypot(rows[i]->std_error, rows[j]->std_error);
      if (rows[j]->rel_gap > rows[i]->rel_gap + tol) {
        ok = false;
        os << "gap(kp=" << rows[j]->kp << ")=" << rows[j]->rel_gap << " > gap(kp=" << rows[i]->kp
           << ")=" << rows[i]->rel_gap << " + " << tol << "; ";
      }
    }
  }
  if (detail) *detail = ok ? "nonincreasing within tolerance" : os.str();
  return ok;
}

SweepResult run_quad_sweep(const ExperimentConfig& cfg, const PolicySpec& policy) {
  cfg.validate();
  policy.validate();
  SweepResult result;
  const std::size_t n = cfg.trials;
  result.trial_seeds.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.trial_seeds[i] = stream_seed(cfg.seed, i, kTrialSalt);

  // The reduced model does not depend on kp, so its rollouts are shared.
  EnvParams reduced_env = cfg.env;
  reduced_env.kp = 0.0;
  const auto reduced_fn = make_policy_fn(policy, reduced_env, cfg.eval_mode);
  std::vector<TrajectoryLog> reduced(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    reduced[i] = rollout(EnvKind::kReduced, reduced_fn, reduced_env, result.trial_seeds[i], cfg.horizon);
  });
  std::vector<std::vector<double>> reduced_dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& r : reduced[i].rows) reduced_dist[i].push_back(distance_to_target(r, cfg.env));
    if (reduced[i].termination == Termination::kTarget) ++result.reduced_targets_reached;
  }
  result.reduced_distance = series_stats(reduced_dist);
  double mean_vr = 0.0;
  for (const auto& log : reduced) mean_vr += log.discounted_return();
  mean_vr /= static_cast<double>(n);

  for (double kp : cfg.kp_list) {
    EnvParams env = cfg.env;
    env.kp = kp;
    const auto fn = make_policy_fn(policy, env, cfg.eval_mode);
    std::vector<TrajectoryLog> full(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      full[i] = rollout(EnvKind::kFull, fn, env, result.trial_seeds[i], cfg.horizon);
    });

    KpRow row;
    row.kp = kp;
    row.mean_vr = mean_vr;
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) {
      row.mean_vk += full[i].discounted_return();
      diff[i] = full[i].discounted_return() - reduced[i].discounted_return();
    }
    row.mean_vk /= static_cast<double>(n);
    const double mean_diff = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double d : diff) ss += (d - mean_diff) * (d - mean_diff);
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    const double denom = std::max(std::abs(mean_vr), 1e-9);
    row.rel_gap = std::abs(mean_diff) / denom;
    row.std_error = sd / std::sqrt(static_cast<double>(n)) / denom;
    if (!std::isfinite(row.rel_gap)) throw std::runtime_error("quad-sweep: non-finite relative gap");

    std::vector<std::vector<double>> dist(n), err(n);
    std::vector<InnerTrace> traces(n);
    double e0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double sum_err = 0.0;
      for (const auto& r : full[i].rows) {
        dist[i].push_back(distance_to_target(r, env));
        err[i].push_back(std::abs(r.theta - r.theta_cmd));
        sum_err += err[i].back();
        traces[i].x.push_back(Eigen::VectorXd::Constant(1, r.theta));
        traces[i].x_star.push_back(Eigen::VectorXd::Constant(1, r.theta_cmd));
      }
      row.theta_error_time_avg += sum_err / static_cast<double>(full[i].rows.size());
      e0 += err[i].front();
      if (full[i].termination == Termination::kBoundary) ++row.boundary_exits;
      if (full[i].termination == Termination::kTarget) ++row.targets_reached;
    }
    row.theta_error_time_avg /= static_cast<double>(n);
    row.distance = series_stats(dist);
    row.theta_error = series_stats(err);
    for (const auto& r : full.front().rows) {
      row.example_theta.push_back(r.theta);
      row.example_theta_star.push_back(r.theta_cmd);
    }
    for (const auto& r : reduced.front().rows) row.example_reduced_theta.push_back(r.theta);

    const ContractionFit fit = fit_contraction(traces, Eigen::MatrixXd::Identity(1, 1));
    row.alpha_hat = fit.alpha_hat;
    row.beta_hat = fit.beta_hat;

    auto& c = row.constants;
    c.B = env.reward_bound();
    c.gamma = env.gamma;
    c.alpha = std::exp(-kp * env.dt);
    c.beta = 1.0;
    c.rho = 1.0;
    c.lambda_min = c.lambda_max = 1.0;
    c.C = variation_stats_from_logs(full).c_hat;
    c.e0 = e0 / static_cast<double>(n);
    c.L = finite_difference_lipschitz(reduced, env);
    // kp = 0 means no contraction, so the bound is vacuous.
    row.thm2_bound = c.alpha < 1.0 ? thm2_value_gap_bound(c, cfg.bound_variant)
                                   : std::numeric_limits<double>::infinity();
    row.truncation_bound = c.B * std::pow(c.gamma, static_cast<double>(cfg.horizon)) / (1.0 - c.gamma);
    result.rows.push_back(std::move(row));
  }
  result.trend_ok = check_gap_trend(result, 2.0, &result.trend_detail);
  return result;
}

nlohmann::json to_json(const SweepResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"kp", r.kp},
                    {"mean_vk", r.mean_vk},
                    {"mean_vr", r.mean_vr},
                    {"rel_gap", r.rel_gap},
                    {"stderr", r.std_error},
                    {"theta_error_time_avg", r.theta_error_time_avg},
                    {"constants", constants_to_json(r.constants)},
                    {"alpha_hat", r.alpha_hat},
                    {"beta_hat", r.beta_hat},
                    {"thm2_bound", std::isfinite(r.thm2_bound) ? nlohmann::json(r.thm2_bound) : nlohmann::json("inf")},
                    {"truncation_bound", r.truncation_bound},
                    {"boundary_exits", r.boundary_exits},
                    {"targets_reached", r.targets_reached}});
  }
  return {{"rows", rows},
          {"reduced_targets_reached", result.reduced_targets_reached},
          {"trend_ok", result.trend_ok},
          {"trend_detail", result.trend_detail}};
}

std::vector<std::filesystem::path> emit_figures(const SweepResult& result, const ExperimentConfig& cfg,
                                                const PolicySpec& policy,
                                                const std::filesystem::path& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw std::runtime_error("cannot create " + outdir.string() + ": " + ec.message());
  const auto g = [](double v) { return format_g17(v); };

  std::ostringstream f2, f3, f4, f5;
  f2 << "kp,mean_vk,mean_vr,rel_gap,stderr,thm2_bound\n";
  f3 << "kp,t,mean,std\n";
  f4 << "kp,t,mean,std\n";
  f5 << "kp,t,theta,theta_star\n";
  for (const auto& r : result.rows) {
    f2 << g(r.kp) << ',' << g(r.mean_vk) << ',' << g(r.mean_vr) << ',' << g(r.rel_gap) << ','
       << g(r.std_error) << ',' << g(r.thm2_bound) << '\n';
    for (std::size_t t = 0; t < r.distance.mean.size(); ++t)
      f3 << g(r.kp) << ',' << t << ',' << g(r.distance.mean[t]) << ',' << g(r.distance.std[t]) << '\n';
    for (std::size_t t = 0; t < r.theta_error.mean.size(); ++t)
      f4 << g(r.kp) << ',' << t << ',' << g(r.theta_error.mean[t]) << ',' << g(r.theta_error.std[t]) << '\n';
    for (std::size_t t = 0; t < r.example_theta.size(); ++t)
      f5 << g(r.kp) << ',' << t << ',' << g(r.example_theta[t]) << ',' << g(r.example_theta_star[t]) << '\n';
  }

  nlohmann::json manifest{
      {"config", to_json(cfg)},
      {"config_hash", config_hash(cfg)},
      {"git_describe", "unknown"},
      {"base_seed", cfg.seed},
      {"trial_seeds", result.trial_seeds},
      {"train_seed", cfg.train.seed},
      {"bound_variant", std::string(to_string(cfg.bound_variant))},
      {"rel_gap_definition", "|mean(G_K - G_R)| / max(|mean G_R|, 1e-9), paired by trial seed"},
      {"stderr_definition", "sample std of paired differences / sqrt(trials) / max(|mean G_R|, 1e-9)"},
      {"policy", to_json(policy)},
      {"sweep", to_json(result)},
      {"files",
       {{"fig2_gap_vs_kp.csv", "kp,mean_vk,mean_vr,rel_gap,stderr,thm2_bound"},
        {"fig3_distance.csv", "kp,t,mean,std of full-system distance to target over running trials"},
        {"fig4_theta_error.csv", "kp,t,mean,std of |theta - theta*| over running trials"},
        {"fig5_theta_traj.csv", "kp,t,theta,theta_star for trial 0 of the full system"}}}};

  std::vector<std::filesystem::path> paths{outdir / "fig2_gap_vs_kp.csv", outdir / "fig3_distance.csv",
                                           outdir / "fig4_theta_error.csv", outdir / "fig5_theta_traj.csv",
                                           outdir / "manifest.json"};
  write_file(paths[0], f2.str());
  write_file(paths[1], f3.str());
  write_file(paths[2], f4.str());
  write_file(paths[3], f5.str());
  write_file(paths[4], manifest.dump(2) + "\n");
  return paths;
}

}  // namespace cxfer
