#pragma once

// Small hand-built instances shared by the unit and acceptance tests.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "cascade_xfer/cascade_mdp.hpp"
#include "cascade_xfer/exact_oracle.hpp"
#include "cascade_xfer/rng.hpp"

namespace fixtures {

using cxfer::Rng;
using cxfer::TabularCascadeMdp;
using cxfer::TrackingController;

inline std::vector<double> random_rows(std::size_t rows, std::size_t width, Rng& rng) {
  std::vector<double> out;
  out.reserve(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> w(width);
    for (auto& v : w) v = rng.uniform(0.05, 1.0);
    const auto n = cxfer::normalized(w);
    out.insert(out.end(), n.begin(), n.end());
  }
  return out;
}

inline std::vector<double> one_hot_rows(const std::vector<std::size_t>& hot, std::size_t width) {
  std::vector<double> out(hot.size() * width, 0.0);
  for (std::size_t r = 0; r < hot.size(); ++r) out[r * width + hot[r]] = 1.0;
  return out;
}

inline std::vector<double> delta(std::size_t width, std::size_t at) {
  std::vector<double> d(width, 0.0);
  d[at] = 1.0;
  return d;
}

/// Random outer kernel and rewards r(s, a); inner states on the line at 0, 1, ...;
/// U = X with kernel_x(.|x, u) = delta_u (the inner loop lands on u in one step).
inline TabularCascadeMdp make_mdp(std::size_t S, std::size_t X, std::size_t A, Rng& rng,
                                  double gamma = 0.9) {
  TabularCascadeMdp m;
  m.s_count = S;
  m.x_count = X;
  m.a_count = A;
  m.u_count = X;
  for (std::size_t x = 0; x < X; ++x) m.x_values.push_back(Eigen::VectorXd::Constant(1, double(x)));
  m.kernel_s = random_rows(S * A * X, S, rng);
  std::vector<std::size_t> land;
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t u = 0; u < X; ++u) land.push_back(u);
  m.kernel_x = one_hot_rows(land, X);
  m.reward.resize(S * A * X);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      const double r = rng.uniform(-1.0, 1.0);
      for (std::size_t x = 0; x < X; ++x) m.reward[(s * A + a) * X + x] = r;
    }
  m.gamma = gamma;
  m.reward_bound = 1.0;
  m.mu0 = cxfer::normalized(std::vector<double>(S, 1.0));
  m.mu0_x = cxfer::normalized(std::vector<double>(X, 1.0));
  return m;
}

/// K(u | x*, x) = (1 - hold) delta_{x*} + hold delta_x, with u indexing inner states.
inline TrackingController steer(std::size_t X, double hold = 0.0) {
  TrackingController k;
  k.x_count = X;
  k.u_count = X;
  k.table.assign(X * X * X, 0.0);
  for (std::size_t xs = 0; xs < X; ++xs)
    for (std::size_t x = 0; x < X; ++x) {
      k.table[(xs * X + x) * X + xs] += 1.0 - hold;
      k.table[(xs * X + x) * X + x] += hold;
    }
  k.p_matrix = Eigen::MatrixXd::Identity(1, 1);
  k.alpha = hold > 0.0 ? hold : 0.5;
  k.beta = 1.0;
  k.rho = 1.0;
  return k;
}

/// Deterministic policy choosing composite (a, x*) = (0, x_star) everywhere.
inline cxfer::TabularPolicy constant_command(const TabularCascadeMdp& m, std::size_t x_star,
                                             std::size_t a = 0) {
  return cxfer::TabularPolicy::from_choices(m, std::vector<std::size_t>(m.s_count, a * m.x_count + x_star));
}

}  // namespace fixtures
