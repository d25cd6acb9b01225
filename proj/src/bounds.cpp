#include "cascade_xfer/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cxfer {

void BoundConstants::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("bound constants: ") + what);
  };
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(B >= 0.0 && L >= 0.0 && C >= 0.0 && e0 >= 0.0, "B, L, C, e0 must be nonnegative");
  require(beta >= 0.0, "beta must be nonnegative");
  require(lambda_min > 0.0 && lambda_max >= lambda_min, "eigenvalues must satisfy 0 < min <= max");
  require(std::abs(rho - std::sqrt(lambda_max / lambda_min)) <= 1e-10,
          "rho must equal sqrt(lambda_max / lambda_min)");
}

std::string_view to_string(SeriesVariant v) {
  return v == SeriesVariant::kAsPrinted ? "as-printed" : "conservative";
}

SeriesVariant series_variant_from_string(std::string_view s) {
  if (s == "as-printed") return SeriesVariant::kAsPrinted;
  if (s == "conservative") return SeriesVariant::kConservative;
  throw std::invalid_argument("unknown bound variant: " + std::string(s));
}

double prop1_tv_bound(const BoundConstants& c, std::size_t t) {
  c.validate();
  if (t == 0) return 0.5 * c.L * c.e0;
  const double at = std::pow(c.alpha, static_cast<double>(t));
  return 0.5 * c.L * c.rho * (at * c.e0 + c.beta * c.C * (1.0 - at) / (1.0 - c.alpha));
}

double thm2_value_gap_bound(const BoundConstants& c, SeriesVariant variant) {
  c.validate();
  const double g = c.gamma, a = c.alpha, bc = c.beta * c.C;
  if (variant == SeriesVariant::kAsPrinted) {
    const double lead = c.B * c.L * g * g / ((1.0 - g) * (1.0 - g * a));
    return lead * (bc / (1.0 - g) + (1.0 + a * (c.rho - g)) * c.e0);
  }
  const double lead = c.B * c.L * g / ((1.0 - g) * (1.0 - g * a));
  return lead * (c.rho * g * bc / (1.0 - g) + (1.0 + g * a * (c.rho - 1.0)) * c.e0);
}

double thm2_value_gap_bound_max(const BoundConstants& c) {
  return std::max(thm2_value_gap_bound(c, SeriesVariant::kAsPrinted),
                  thm2_value_gap_bound(c, SeriesVariant::kConservative));
}

double lemma1_delta_p_bound(const BoundConstants& c, std::size_t t) {
  c.validate();
  if (t == 0) return 0.0;
  const double a = c.alpha, bc = c.beta * c.C;
  const double tm1 = static_cast<double>(t - 1);
  return c.L * c.e0 + c.L * c.rho * bc * tm1 / (1.0 - a) +
         c.L * c.rho * a * ((1.0 - std::pow(a, tm1)) / (1.0 - a)) * (c.e0 - bc / (1.0 - a));
}

double iss_unroll(const BoundConstants& c, double e0_p, std::span<const double> inputs) {
  if (e0_p < 0.0) throw std::invalid_argument("iss_unroll: e0_p must be nonnegative");
  double e = e0_p;
  for (double u : inputs) {
    if (u < 0.0) throw std::invalid_argument("iss_unroll: inputs must be nonnegative");
    e = c.alpha * e + c.beta * u;
  }
  return e;
}

SeriesReport series_constants(double gamma, double alpha, std::size_t terms) {
  if (!(gamma > 0.0 && gamma < 1.0) || !(alpha >= 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("series_constants: need gamma in (0,1), alpha in [0,1)");
  }
  SeriesReport r;
  r.sum_gamma_t_printed = gamma * gamma / (1.0 - gamma);
  r.sum_gamma_t_tm1_printed = gamma * gamma / ((1.0 - gamma) * (1.0 - gamma));
  r.sum_mixed_printed = gamma / ((1.0 - gamma) * (1.0 - gamma * alpha));
  double gt = 1.0;
  double at = 1.0;  // alpha^(t-1)
  for (std::size_t t = 1; t <= terms; ++t) {
    gt *= gamma;
    r.sum_gamma_t_partial += gt;
    r.sum_gamma_t_tm1_partial += gt * static_cast<double>(t - 1);
    r.sum_mixed_partial += gt * (1.0 - at) / (1.0 - alpha);
    at *= alpha;
  }
  return r;
}

}  // namespace cxfer
