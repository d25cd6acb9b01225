#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "cascade_xfer/rng.hpp"

namespace cxfer {

inline constexpr double kRowSumTol = 1e-12;
inline constexpr double kTableEqualityTol = 1e-12;
inline constexpr double kSymmetryTol = 1e-10;

/// Finite cascade MDP. The outer block S is driven by (A, X); the inner block
/// X is driven by U alone. The reduced-order model treats X as an action.
///
/// Table layouts (all row-major, innermost index last):
///   kernel_s[((s * a_count + a) * x_count + x) * s_count + s']
///   kernel_x[(x * u_count + u) * x_count + x']
///   reward  [(s * a_count + a) * x_count + x]
struct TabularCascadeMdp {
  std::size_t s_count = 0;
  std::size_t x_count = 0;
  std::size_t a_count = 0;
  std::size_t u_count = 0;
  std::vector<Eigen::VectorXd> x_values;
  std::vector<double> kernel_s;
  std::vector<double> kernel_x;
  std::vector<double> reward;
  double gamma = 0.9;
  double reward_bound = 1.0;
  std::vector<double> mu0;
  std::vector<double> mu0_x;

  std::span<const double> outer_row(std::size_t s, std::size_t a, std::size_t x) const {
    return {kernel_s.data() + ((s * a_count + a) * x_count + x) * s_count, s_count};
  }
  std::span<const double> inner_row(std::size_t x, std::size_t u) const {
    return {kernel_x.data() + (x * u_count + u) * x_count, x_count};
  }
  double r(std::size_t s, std::size_t a, std::size_t x) const {
    return reward[(s * a_count + a) * x_count + x];
  }
  std::size_t inner_dim() const { return x_values.empty() ? 0 : x_values.front().size(); }

  /// Throws std::invalid_argument on malformed tables, invalid distributions,
  /// |r| > B, or gamma outside (0, 1).
  void validate() const;
};

/// Inner-loop law K(u | x*, x) with its contraction certificate.
/// table[(x_star * x_count + x) * u_count + u].
struct TrackingController {
  std::size_t x_count = 0;
  std::size_t u_count = 0;
  std::vector<double> table;
  Eigen::MatrixXd p_matrix;
  double alpha = 0.5;
  double beta = 1.0;
  double rho = 1.0;

  std::span<const double> row(std::size_t x_star, std::size_t x) const {
    return {table.data() + (x_star * x_count + x) * u_count, u_count};
  }

  void validate() const;
};

/// Extreme eigenvalues of a symmetric positive-definite matrix.
struct Spectrum {
  double lambda_min = 1.0;
  double lambda_max = 1.0;
  double rho() const;
};
Spectrum spd_spectrum(const Eigen::MatrixXd& p);

/// ||v||_P = sqrt(v' P v).
double p_norm(const Eigen::MatrixXd& p, const Eigen::VectorXd& v);

/// Full-order MDP composed with the tracking controller.
/// kernel_k[((((s * A + a) * X + x) * X + x_star) * S + s') * X + x'].
struct ClosedLoopMdp {
  TabularCascadeMdp base;
  TrackingController controller;
  std::vector<double> kernel_k;

  std::span<const double> row(std::size_t s, std::size_t a, std::size_t x,
                              std::size_t x_star) const {
    const auto& m = base;
    const std::size_t width = m.s_count * m.x_count;
    return {kernel_k.data() +
                (((s * m.a_count + a) * m.x_count + x) * m.x_count + x_star) * width,
            width};
  }
  /// Next-inner-state distribution given (x, x*) with the controller applied.
  std::vector<double> inner_step(std::size_t x, std::size_t x_star) const;
};

ClosedLoopMdp build_closed_loop(const TabularCascadeMdp& mdp, const TrackingController& k);

/// Full-order kernel split into its two factors, each indexed (s, a, x, u):
///   next_s[(((s * A + a) * X + x) * U + u) * S + s']
///   next_x[(((s * A + a) * X + x) * U + u) * X + x']
struct FullOrderKernel {
  std::size_t s_count = 0;
  std::size_t x_count = 0;
  std::size_t a_count = 0;
  std::size_t u_count = 0;
  std::vector<double> next_s;
  std::vector<double> next_x;

  std::size_t slot(std::size_t s, std::size_t a, std::size_t x, std::size_t u) const {
    return ((s * a_count + a) * x_count + x) * u_count + u;
  }
};

/// Full kernel induced by a cascade MDP (satisfies both structural checks).
FullOrderKernel compose_full_kernel(const TabularCascadeMdp& mdp);

/// Exact one-step contraction ratio of the inner loop toward the commands in
/// `commands` (all inner states when empty):
///   max over x* in commands, x with ||x - x*||_P > 0 of
///   E[||X' - x*||_P | x, x*] / ||x - x*||_P.
/// Returns +infinity if some x at zero P-distance from a command can leave it.
double contraction_ratio(const TabularCascadeMdp& mdp, const TrackingController& k,
                         std::span<const std::size_t> commands = {});

struct ValidationReport {
  bool pass = true;
  double max_deviation = 0.0;
  /// Index tuples (s, a, x, u) of the slots whose deviation exceeds tolerance.
  std::vector<std::vector<std::size_t>> violations;
};

/// Next-x law must not depend on (s, a).
ValidationReport validate_assumption2(const FullOrderKernel& full, double tol = kTableEqualityTol);

/// Every u-slice of the full outer kernel must equal the reduced kernel.
ValidationReport validate_assumption3(const FullOrderKernel& full,
                                      const TabularCascadeMdp& reduced,
                                      double tol = kTableEqualityTol);

/// Tightest L with sum_s' |P(s'|s,a,x) - P(s'|s,a,x')| <= L ||x - x'|| over all
/// pairs. Returns +infinity when two distinct indices share an embedding but
/// have different rows. Throws std::invalid_argument when x_count < 2.
double estimate_lipschitz(const TabularCascadeMdp& mdp);

/// Half-L1 distance between two distributions.
double tv_distance(std::span<const double> p, std::span<const double> q);

// Serialization ("cascade-mdp-v1").
nlohmann::json to_json(const TabularCascadeMdp& mdp);
TabularCascadeMdp mdp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrackingController& k);
TrackingController controller_from_json(const nlohmann::json& j);

/// Knobs for the random instance generator.
struct GeneratorParams {
  std::size_t max_s = 5;
  std::size_t max_x = 4;
  std::size_t max_a = 3;
  std::size_t max_dim = 2;
  double gamma_lo = 0.6;
  double gamma_hi = 0.9;
  double reward_bound = 1.0;
  /// Rewards depend on (s, a) only.
  bool reward_ignores_x = true;
};

struct RandomInstance {
  TabularCascadeMdp mdp;
  TrackingController controller;
};

/// Random cascade instance whose inner loop contracts toward every command:
/// u indexes a target inner state, kernel_x(.|x,u) only lands on x or on
/// points strictly P-closer to u, and K mixes "steer to x*" with "hold".
/// The controller's alpha is left at its default; see certify().
RandomInstance generate_instance(const GeneratorParams& params, Rng& rng);

/// Normalize positive weights into a distribution.
std::vector<double> normalized(std::vector<double> w);

}  // namespace cxfer
