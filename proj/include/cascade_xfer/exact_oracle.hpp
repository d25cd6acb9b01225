#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cascade_xfer/bounds.hpp"
#include "cascade_xfer/cascade_mdp.hpp"

namespace cxfer {

/// Policy over composite actions c = a * x_count + x_star.
/// table[s * (a_count * x_count) + c].
struct TabularPolicy {
  std::size_t s_count = 0;
  std::size_t a_count = 0;
  std::size_t x_count = 0;
  std::vector<double> table;
  bool deterministic = false;

  std::size_t composite_count() const { return a_count * x_count; }
  std::span<const double> row(std::size_t s) const {
    return {table.data() + s * composite_count(), composite_count()};
  }
  std::size_t action_of(std::size_t c) const { return c / x_count; }
  std::size_t command_of(std::size_t c) const { return c % x_count; }

  void validate() const;

  /// One-hot policy choosing composite[s] in state s.
  static TabularPolicy from_choices(const TabularCascadeMdp& mdp, const std::vector<std::size_t>& composite);
  /// Every composite action with equal probability.
  static TabularPolicy uniform(const TabularCascadeMdp& mdp);
};

/// Which system generated a trajectory distribution.
enum class System { kReduced, kClosedLoop };

/// Distribution over trajectory prefixes (s, a, x*)_{0:t}; each key holds
/// 3 * (t + 1) indices.
struct OccupancySnapshot {
  std::size_t t = 0;
  std::map<std::vector<std::size_t>, double> prob;
};

OccupancySnapshot occupancy(const ClosedLoopMdp& cl, const TabularPolicy& policy, std::size_t t,
                            System system);

struct ValueIterationResult {
  TabularPolicy policy;
  std::vector<double> values;
  double residual = 0.0;  ///< sup-norm Bellman residual of `values`
  std::size_t iterations = 0;
};

/// Optimal reduced-model values and the greedy composite-action policy
/// (ties go to the lowest composite index).
ValueIterationResult value_iteration(const TabularCascadeMdp& mdp, double tol);

/// Sup-norm Bellman optimality residual of a value table.
double bellman_residual(const TabularCascadeMdp& mdp, const std::vector<double>& values);

/// V_R^pi(s) via a dense linear solve.
std::vector<double> evaluate_policy_reduced(const TabularCascadeMdp& mdp, const TabularPolicy& policy);

/// sum_s mu0(s) V(s).
double initial_value(const TabularCascadeMdp& mdp, const std::vector<double>& values);

struct ClosedLoopValue {
  std::vector<double> table;  ///< V_K(s, x) at index s * x_count + x
  double value = 0.0;         ///< expectation under mu0 x mu0_x
};

/// V_K^pi on the (s, x) product space; reward r(s, a, x) with the actual x.
/// Throws std::length_error when s_count * x_count exceeds `product_cap`.
ClosedLoopValue evaluate_policy_closed_loop(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                            std::size_t product_cap = 4096);

/// How the time-t closed-loop outer kernel is formed before comparing with P_R.
enum class TvConvention {
  /// E over (s, a, x*) at t-1 of the TV distance, X marginalized against
  /// its conditional law given (s, a, x*).
  kPolicyExpected,
  /// E over whole prefixes (s, a, x*)_{0:t-1}, X marginalized against its
  /// law given the prefix. Exponential cost, limited by the prefix cap.
  kHistoryConditioned,
  /// X marginalized against its unconditional law; sup over every (s, a, x*)
  /// index. Diagnostic only: not bounded by the TV bound in general.
  kMarginalSup,
};

/// TV(t) for t >= 1 (the distance of the transition from t-1 to t).
double exact_tv(const ClosedLoopMdp& cl, std::size_t t, const TabularPolicy& policy,
                TvConvention convention = TvConvention::kPolicyExpected);

/// [TV(1), ..., TV(t_max)] in one forward pass (kPolicyExpected or kMarginalSup).
std::vector<double> exact_tv_series(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                    std::size_t t_max,
                                    TvConvention convention = TvConvention::kPolicyExpected);

/// Joint law of (s_t, x_t) under the closed loop, index s * x_count + x.
std::vector<double> closed_loop_state_marginal(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                               std::size_t t);

inline constexpr std::size_t kDeltaPHorizonCap = 6;
inline constexpr std::size_t kPrefixCap = 20'000'000;

struct TrajectoryDiscrepancy {
  std::vector<double> delta_p;     ///< [dP(0), ..., dP(horizon)]
  std::vector<double> tv_history;  ///< [0, TV_hist(1), ..., TV_hist(horizon)]
};

/// Exhaustive prefix enumeration of both systems. Throws std::length_error
/// when horizon > cap or the number of live prefixes exceeds kPrefixCap.
TrajectoryDiscrepancy trajectory_discrepancy(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                             std::size_t horizon,
                                             std::size_t horizon_cap = kDeltaPHorizonCap);

std::vector<double> exact_delta_p(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                  std::size_t horizon, std::size_t horizon_cap = kDeltaPHorizonCap);

/// Sequence of inner states and commands from one rollout (same length).
struct InnerTrace {
  std::vector<Eigen::VectorXd> x;
  std::vector<Eigen::VectorXd> x_star;
};

struct ContractionFit {
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  double c_hat = 0.0;
  bool exact = false;           ///< both regressors and all errors vanish
  bool beta_identified = true;  ///< false when no command ever changed
};

/// Least squares on e_t = alpha * e_{t-1} + beta * (x*_{t-1} - x*_t) with
/// e_t = x_t - x*_t, in the P inner product, pooled over all traces.
/// c_hat is max_t of the across-trace mean of ||x*_t - x*_{t-1}||_P.
ContractionFit fit_contraction(const std::vector<InnerTrace>& traces, const Eigen::MatrixXd& p);

ContractionFit estimate_contraction(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                    std::size_t trials, std::size_t horizon, std::uint64_t seed);

/// Constants computed exactly from an instance so that every assumption
/// behind the bounds holds.
struct Certificate {
  BoundConstants constants;
  bool valid = false;
  std::string reason;
};

Certificate certify(const ClosedLoopMdp& cl, const TabularPolicy& policy);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t rollouts = 0;
  double truncation_bound = 0.0;  ///< B gamma^horizon / (1 - gamma)
};

MonteCarloEstimate monte_carlo_reduced(const TabularCascadeMdp& mdp, const TabularPolicy& policy,
                                       std::size_t rollouts, std::size_t horizon, std::uint64_t seed,
                                       unsigned workers = 1);

MonteCarloEstimate monte_carlo_closed_loop(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                           std::size_t rollouts, std::size_t horizon,
                                           std::uint64_t seed, unsigned workers = 1);

}  // namespace cxfer
