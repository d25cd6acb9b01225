#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace cxfer {

/// Constants entering the transfer bounds.
struct BoundConstants {
  double B = 1.0;      ///< reward bound
  double L = 0.0;      ///< L1-Lipschitz constant of the reduced outer kernel in x
  double gamma = 0.9;  ///< discount
  double alpha = 0.5;  ///< inner-loop contraction rate, in (0, 1)
  double beta = 1.0;   ///< inner-loop input gain
  double C = 0.0;      ///< bound on E||x*_t - x*_{t-1}||_P
  double rho = 1.0;    ///< sqrt(lambda_max / lambda_min)
  double e0 = 0.0;     ///< E||x_0 - x*_0|| (Euclidean)
  double lambda_min = 1.0;
  double lambda_max = 1.0;

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// Which closed form of the value-gap bound to evaluate.
///  - kAsPrinted: the published expression verbatim.
///  - kConservative: the same three-term sum with every geometric series
///    summed correctly; never smaller than kAsPrinted.
enum class SeriesVariant { kAsPrinted, kConservative };

std::string_view to_string(SeriesVariant v);
SeriesVariant series_variant_from_string(std::string_view s);

/// Upper bound on TV(t + 1).
double prop1_tv_bound(const BoundConstants& c, std::size_t t);

/// Upper bound on |V_K - V_R|.
double thm2_value_gap_bound(const BoundConstants& c, SeriesVariant variant = SeriesVariant::kAsPrinted);

/// max over both variants.
double thm2_value_gap_bound_max(const BoundConstants& c);

/// Upper bound on the L1 distance between closed-loop and reduced trajectory
/// distributions over (s, a, x*)_{0:t}.
double lemma1_delta_p_bound(const BoundConstants& c, std::size_t t);

/// Unrolled ISS bound after t = inputs.size() steps:
///   alpha^t * e0_p + beta * sum_{u=1..t} alpha^(t-u) * inputs[u-1].
double iss_unroll(const BoundConstants& c, double e0_p, std::span<const double> inputs);

/// The three geometric series used to collapse the value-gap sum, both as
/// printed and as 10^4-term partial sums.
struct SeriesReport {
  double sum_gamma_t_printed = 0.0;          // gamma^2 / (1 - gamma)
  double sum_gamma_t_partial = 0.0;          // sum_{t>=1} gamma^t
  double sum_gamma_t_tm1_printed = 0.0;      // gamma^2 / (1 - gamma)^2
  double sum_gamma_t_tm1_partial = 0.0;      // sum_{t>=1} gamma^t (t - 1)
  double sum_mixed_printed = 0.0;            // gamma / ((1 - gamma)(1 - gamma alpha))
  double sum_mixed_partial = 0.0;            // sum_{t>=1} gamma^t (1 - alpha^(t-1)) / (1 - alpha)

  double discrepancy_gamma_t() const { return sum_gamma_t_printed - sum_gamma_t_partial; }
  double discrepancy_gamma_t_tm1() const { return sum_gamma_t_tm1_printed - sum_gamma_t_tm1_partial; }
  double discrepancy_mixed() const { return sum_mixed_printed - sum_mixed_partial; }
};

SeriesReport series_constants(double gamma, double alpha, std::size_t terms = 10000);

}  // namespace cxfer
