#include "cascade_xfer/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cascade_xfer/parallel.hpp"

namespace cxfer {

std::string_view to_string(FeatureMap f) {
  return f == FeatureMap::kAffine ? "affine-v1" : "affine-quad-v1";
}

FeatureMap feature_map_from_string(std::string_view s) {
  if (s == "affine-v1") return FeatureMap::kAffine;
  if (s == "affine-quad-v1") return FeatureMap::kAffineQuadratic;
  throw std::invalid_argument("unknown feature map: " + std::string(s));
}

PolicySpec PolicySpec::zeros(FeatureMap f) {
  PolicySpec p;
  p.feature_map = f;
  p.weights.assign(p.weight_count(), 0.0);
  return p;
}

void PolicySpec::validate() const {
  if (weights.size() != weight_count()) throw std::invalid_argument("policy: wrong number of weights");
  for (double w : weights)
    if (!std::isfinite(w)) throw std::invalid_argument("policy: non-finite weight");
  for (double l : log_std)
    if (!std::isfinite(l)) throw std::invalid_argument("policy: non-finite log-stddev");
}

std::vector<double> policy_features(FeatureMap f, const QuadrotorState& s, const EnvParams& p) {
  const double ey = p.target_y - s.y, ez = p.target_z - s.z;
  std::vector<double> out{ey / 10.0, ez / 10.0, s.y_dot / 5.0, s.z_dot / 5.0};
  if (f == FeatureMap::kAffineQuadratic) out.push_back(std::hypot(ey, ez) / p.d_max());
  return out;
}

QuadrotorAction act(const PolicySpec& policy, const QuadrotorState& s, const EnvParams& p, Rng& rng,
                    ActMode mode) {
  const auto f = policy_features(policy.feature_map, s, p);
  const std::size_t width = f.size() + 1;
  std::array<double, 2> pre{};
  for (std::size_t k = 0; k < 2; ++k) {
    const double* w = policy.weights.data() + k * width;
    double v = w[f.size()];
    for (std::size_t i = 0; i < f.size(); ++i) v += w[i] * f[i];
    if (mode == ActMode::kSample) v += std::exp(policy.log_std[k]) * rng.normal();
    pre[k] = v;
  }
  return {kThrustLimit * std::tanh(pre[0]), kThetaCmdLimit * std::tanh(pre[1])};
}

QuadPolicyFn make_policy_fn(const PolicySpec& policy, const EnvParams& p, ActMode mode) {
  return [policy, p, mode](const QuadrotorState& s, Rng& rng) { return act(policy, s, p, rng, mode); };
}

nlohmann::json to_json(const PolicySpec& policy) {
  return {{"schema", "policy-v1"},
          {"feature_map", std::string(to_string(policy.feature_map))},
          {"weights", policy.weights},
          {"log_std", policy.log_std},
          {"squash",
           {{"thrust", {{"kind", "tanh"}, {"bound", kThrustLimit}}},
            {"theta_cmd", {{"kind", "tanh"}, {"bound", kThetaCmdLimit}}}}}};
}

PolicySpec policy_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "policy-v1") throw std::invalid_argument("policy json: expected schema policy-v1");
  PolicySpec p;
  p.feature_map = feature_map_from_string(j.at("feature_map").get<std::string>());
  p.weights = j.at("weights").get<std::vector<double>>();
  const auto ls = j.at("log_std").get<std::vector<double>>();
  if (ls.size() != 2) throw std::invalid_argument("policy json: log_std must have two entries");
  p.log_std = {ls[0], ls[1]};
  if (j.contains("squash")) {
    const auto& sq = j.at("squash");
    for (const char* key : {"thrust", "theta_cmd"}) {
      if (sq.at(key).at("kind").get<std::string>() != "tanh") {
        throw std::invalid_argument("policy json: only tanh squashing is supported");
      }
    }
  }
  p.validate();
  return p;
}

void TrainConfig::validate() const {
  if (!(elite_fraction > 0.0 && elite_fraction < 1.0)) {
    throw std::invalid_argument("train config: elite fraction must lie in (0, 1)");
  }
  if (population == 0 || rollouts_per_candidate == 0 || horizon == 0) {
    throw std::invalid_argument("train config: counts must be positive");
  }
  if (method == TrainMethod::kExternalPpoImport && import_path.empty()) {
    throw std::invalid_argument("train config: external-ppo-import needs import_path");
  }
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"method", cfg.method == TrainMethod::kCem ? "cem" : "external-ppo-import"},
          {"population", cfg.population},
          {"elite_fraction", cfg.elite_fraction},
          {"iterations", cfg.iterations},
          {"rollouts_per_candidate", cfg.rollouts_per_candidate},
          {"seed", cfg.seed},
          {"init_std", cfg.init_std},
          {"min_std", cfg.min_std},
          {"smoothness_weight", cfg.smoothness_weight},
          {"horizon", cfg.horizon},
          {"feature_map", std::string(to_string(cfg.feature_map))},
          {"import_path", cfg.import_path},
          {"reference_ppo",
           {{"learning_rate", cfg.reference.learning_rate},
            {"optimizer", cfg.reference.optimizer},
            {"episodes", cfg.reference.episodes},
            {"batch_size", cfg.reference.batch_size},
            {"clip_range", cfg.reference.clip_range}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  const std::string method = j.value("method", std::string("cem"));
  if (method == "cem") {
    cfg.method = TrainMethod::kCem;
  } else if (method == "external-ppo-import") {
    cfg.method = TrainMethod::kExternalPpoImport;
  } else {
    throw std::invalid_argument("train config: unknown method " + method);
  }
  cfg.population = j.value("population", cfg.population);
  cfg.elite_fraction = j.value("elite_fraction", cfg.elite_fraction);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.rollouts_per_candidate = j.value("rollouts_per_candidate", cfg.rollouts_per_candidate);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.init_std = j.value("init_std", cfg.init_std);
  cfg.min_std = j.value("min_std", cfg.min_std);
  cfg.smoothness_weight = j.value("smoothness_weight", cfg.smoothness_weight);
  cfg.horizon = j.value("horizon", cfg.horizon);
  cfg.feature_map = feature_map_from_string(j.value("feature_map", std::string(to_string(cfg.feature_map))));
  cfg.import_path = j.value("import_path", std::string());
  cfg.validate();
  return cfg;
}

CemResult cem_optimize(const std::vector<double>& init_mean, const CemSettings& settings,
                       std::uint64_t seed,
                       const std::function<double(const std::vector<double>&, long)>& objective,
                       unsigned workers) {
  const std::size_t n = init_mean.size();
  const std::size_t elites =
      std::max<std::size_t>(1, static_cast<std::size_t>(settings.elite_fraction * settings.population));
  std::vector<double> mean = init_mean;
  std::vector<double> stddev(n, settings.init_std);

  CemResult result;
  result.best = mean;
  result.best_score = objective(mean, -1);
  if (!std::isfinite(result.best_score)) throw std::runtime_error("cem: non-finite score for the initial mean");

  std::vector<std::vector<double>> candidates(settings.population, std::vector<double>(n));
  std::vector<double> scores(settings.population);
  std::vector<std::size_t> order(settings.population);
  for (std::size_t it = 0; it < settings.iterations; ++it) {
    Rng rng(seed, it, 0xCE3);
    for (auto& cand : candidates)
      for (std::size_t d = 0; d < n; ++d) cand[d] = mean[d] + stddev[d] * rng.normal();

    parallel_for(settings.population, workers,
                 [&](std::size_t i) { scores[i] = objective(candidates[i], static_cast<long>(it)); });
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!std::isfinite(scores[i])) {
        throw std::runtime_error("cem: non-finite return for candidate " + std::to_string(i) +
                                 " at iteration " + std::to_string(it));
      }
    }

    std::iota(order.begin(), order.end(), 0);
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    for (std::size_t d = 0; d < n; ++d) {
      double m = 0.0;
      for (std::size_t e = 0; e < elites; ++e) m += candidates[order[e]][d];
      m /= static_cast<double>(elites);
      double v = 0.0;
      for (std::size_t e = 0; e < elites; ++e) v += (candidates[order[e]][d] - m) * (candidates[order[e]][d] - m);
      mean[d] = m;
      stddev[d] = std::max(std::sqrt(v / static_cast<double>(elites)), settings.min_std);
    }

    const double score = objective(mean, -1);
    if (!std::isfinite(score)) throw std::runtime_error("cem: non-finite validation return");
    result.curve.push_back(score);
    if (score > result.best_score) {
      result.best_score = score;
      result.best = mean;
    }
  }
  return result;
}

namespace {

double episode_objective(const ReducedQuadrotorEnv& env, const PolicySpec& policy, const TrainConfig& cfg,
                         long iteration) {
  const auto& p = env.params();
  const auto fn = make_policy_fn(policy, p, ActMode::kMean);
  const std::size_t episodes = iteration < 0 ? 2 * cfg.rollouts_per_candidate : cfg.rollouts_per_candidate;
  const std::uint64_t salt = iteration < 0 ? 0xFA11DA7EULL : static_cast<std::uint64_t>(iteration) + 1;
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng(cfg.seed, e, salt);
    const QuadrotorState s0 = sample_initial_state(rng, p);
    const auto log = rollout_from(env, fn, s0, rng, std::min(cfg.horizon, p.max_steps));
    double ret = log.discounted_return();
    if (cfg.smoothness_weight > 0.0) {
      double disc = p.gamma, penalty = 0.0;
      for (std::size_t t = 1; t < log.rows.size(); ++t, disc *= p.gamma) {
        penalty += disc * std::abs(log.rows[t].theta_cmd - log.rows[t - 1].theta_cmd);
      }
      ret -= cfg.smoothness_weight * penalty;
    }
    total += ret;
  }
  return total / static_cast<double>(episodes);
}

}  // namespace

TrainResult train_cem(const ReducedQuadrotorEnv& env, const TrainConfig& cfg, unsigned workers) {
  cfg.validate();
  PolicySpec base = PolicySpec::zeros(cfg.feature_map);
  CemSettings settings{cfg.population, cfg.elite_fraction, cfg.iterations, cfg.init_std, cfg.min_std};
  auto objective = [&](const std::vector<double>& w, long iteration) {
    PolicySpec candidate = base;
    candidate.weights = w;
    return episode_objective(env, candidate, cfg, iteration);
  };
  const CemResult cem = cem_optimize(base.weights, settings, cfg.seed, objective, workers);
  TrainResult out;
  out.policy = base;
  out.policy.weights = cem.best;
  out.curve = cem.curve;
  out.validation_return = cem.best_score;
  return out;
}

TrainResult obtain_policy(const ReducedQuadrotorEnv& env, const TrainConfig& cfg, unsigned workers) {
  cfg.validate();
  if (cfg.method == TrainMethod::kCem) return train_cem(env, cfg, workers);
  std::ifstream in(cfg.import_path);
  if (!in) throw std::runtime_error("cannot open policy file " + cfg.import_path);
  TrainResult out;
  out.policy = policy_from_json(nlohmann::json::parse(in));
  out.validation_return = episode_objective(env, out.policy, cfg, -1);
  return out;
}

VariationStats variation_stats_from_logs(const std::vector<TrajectoryLog>& logs) {
  std::vector<double> sum;
  std::vector<std::size_t> count;
  for (const auto& log : logs) {
    for (std::size_t t = 1; t < log.rows.size(); ++t) {
      if (sum.size() < t) {
        sum.resize(t, 0.0);
        count.resize(t, 0);
      }
      sum[t - 1] += std::abs(log.rows[t].theta_cmd - log.rows[t - 1].theta_cmd);
      count[t - 1] += 1;
    }
  }
  VariationStats out;
  out.series.resize(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    out.series[i] = sum[i] / static_cast<double>(count[i]);
    out.c_hat = std::max(out.c_hat, out.series[i]);
  }
  return out;
}

VariationStats variation_stats(const PolicySpec& policy, EnvKind kind, const EnvParams& p,
                               std::size_t trials, std::uint64_t seed, ActMode mode) {
  const auto fn = make_policy_fn(policy, p, mode);
  std::vector<TrajectoryLog> logs;
  logs.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) logs.push_back(rollout(kind, fn, p, stream_seed(seed, i), p.max_steps));
  return variation_stats_from_logs(logs);
}

}  // namespace cxfer
