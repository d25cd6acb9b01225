#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cascade_xfer/quadrotor.hpp"
#include "cascade_xfer/rng.hpp"

namespace cxfer {

/// Observation features fed to the affine policy head.
///   kAffine:          (ty - y)/10, (tz - z)/10, y_dot/5, z_dot/5
///   kAffineQuadratic: the above plus distance-to-target / d_max
enum class FeatureMap { kAffine, kAffineQuadratic };

std::string_view to_string(FeatureMap f);
FeatureMap feature_map_from_string(std::string_view s);

/// Squashed Gaussian policy. Each output is
///   bound * tanh(w . [features, 1] + std * noise)
/// with bounds (1, pi/8) for (thrust, theta_cmd).
struct PolicySpec {
  FeatureMap feature_map = FeatureMap::kAffine;
  /// Row-major 2 x (feature_count + 1): thrust row, then theta_cmd row; the
  /// last column is the bias.
  std::vector<double> weights;
  std::array<double, 2> log_std{-1.0, -1.0};

  std::size_t feature_count() const { return feature_map == FeatureMap::kAffine ? 4 : 5; }
  std::size_t weight_count() const { return 2 * (feature_count() + 1); }

  static PolicySpec zeros(FeatureMap f = FeatureMap::kAffine);
  void validate() const;
};

std::vector<double> policy_features(FeatureMap f, const QuadrotorState& s, const EnvParams& p);

enum class ActMode { kSample, kMean };

QuadrotorAction act(const PolicySpec& policy, const QuadrotorState& s, const EnvParams& p, Rng& rng,
                    ActMode mode = ActMode::kSample);

/// Binds a policy to a callable usable by rollout().
QuadPolicyFn make_policy_fn(const PolicySpec& policy, const EnvParams& p, ActMode mode);

nlohmann::json to_json(const PolicySpec& policy);
PolicySpec policy_from_json(const nlohmann::json& j);

/// Reference PPO setup the desk-scale trainer stands in for.
struct PpoReference {
  double learning_rate = 3e-4;
  std::string optimizer = "Adam";
  std::int64_t episodes = 1'000'000;
  std::size_t batch_size = 64;
  double clip_range = 0.2;
};

enum class TrainMethod { kCem, kExternalPpoImport };

struct TrainConfig {
  TrainMethod method = TrainMethod::kCem;
  std::size_t population = 96;
  double elite_fraction = 0.2;
  std::size_t iterations = 60;
  std::size_t rollouts_per_candidate = 24;
  std::uint64_t seed = 7;
  double init_std = 3.0;
  double min_std = 0.05;
  /// Weight of sum_t gamma^t |theta*_t - theta*_{t-1}| subtracted from the
  /// return; 0 disables the smoothness term.
  double smoothness_weight = 0.0;
  std::size_t horizon = 400;
  FeatureMap feature_map = FeatureMap::kAffineQuadratic;
  std::string import_path;
  PpoReference reference;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct CemSettings {
  std::size_t population = 48;
  double elite_fraction = 0.2;
  std::size_t iterations = 40;
  double init_std = 1.0;
  double min_std = 0.05;
};

struct CemResult {
  std::vector<double> best;
  double best_score = 0.0;
  /// Score of each iteration's elite mean on the validation objective.
  std::vector<double> curve;
};

/// Cross-entropy method with a diagonal Gaussian search distribution.
/// objective(params, iteration) scores a candidate; iteration == -1 denotes
/// the validation evaluation of an elite mean. Elites are chosen by
/// (score desc, candidate index asc), so results do not depend on scheduling.
CemResult cem_optimize(const std::vector<double>& init_mean, const CemSettings& settings,
                       std::uint64_t seed,
                       const std::function<double(const std::vector<double>&, long)>& objective,
                       unsigned workers = 1);

struct TrainResult {
  PolicySpec policy;
  std::vector<double> curve;
  double validation_return = 0.0;
};

/// Trains on the reduced-order environment only.
TrainResult train_cem(const ReducedQuadrotorEnv& env, const TrainConfig& cfg, unsigned workers = 1);

/// Dispatches on cfg.method: CEM training or JSON import.
TrainResult obtain_policy(const ReducedQuadrotorEnv& env, const TrainConfig& cfg, unsigned workers = 1);

struct VariationStats {
  double c_hat = 0.0;
  /// Mean |theta*_t - theta*_{t-1}| over trials still running at t (t >= 1).
  std::vector<double> series;
};

/// Reference-variation statistics of the commanded attitude on the given
/// environment; trial i starts from rollout seed stream_seed(seed, i).
VariationStats variation_stats(const PolicySpec& policy, EnvKind kind, const EnvParams& p,
                               std::size_t trials, std::uint64_t seed, ActMode mode = ActMode::kMean);

/// Same statistics from already-recorded logs.
VariationStats variation_stats_from_logs(const std::vector<TrajectoryLog>& logs);

}  // namespace cxfer
