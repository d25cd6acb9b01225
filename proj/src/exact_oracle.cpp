#include "cascade_xfer/exact_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "cascade_xfer/parallel.hpp"
#include "cascade_xfer/rng.hpp"

namespace cxfer {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void check_policy_matches(const TabularCascadeMdp& mdp, const TabularPolicy& policy) {
  require(policy.s_count == mdp.s_count && policy.a_count == mdp.a_count &&
              policy.x_count == mdp.x_count,
          "policy dimensions do not match the mdp");
  policy.validate();
}

/// Precomputed inner transition law with the controller applied:
/// inner[(x * X + x_star) * X + x'].
std::vector<double> inner_table(const ClosedLoopMdp& cl) {
  const std::size_t X = cl.base.x_count;
  std::vector<double> t(X * X * X);
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t xs = 0; xs < X; ++xs) {
      const auto row = cl.inner_step(x, xs);
      std::ranges::copy(row, t.begin() + static_cast<std::ptrdiff_t>((x * X + xs) * X));
    }
  return t;
}

double half_l1(std::span<const double> diff) {
  double sum = 0.0;
  for (double d : diff) sum += std::abs(d);
  return 0.5 * sum;
}

/// Depth-first enumeration of (s, a, x*) prefixes of both systems. At each
/// node the visitor sees the depth, the last (s, c), the closed-loop joint
/// mass of the prefix split over the current inner state, and the reduced
/// mass of the prefix.
class PrefixEnumerator {
 public:
  using Visitor = std::function<void(std::size_t depth, const std::vector<std::size_t>& prefix,
                                     std::span<const double> w_k, double p_r)>;

  PrefixEnumerator(const ClosedLoopMdp& cl, const TabularPolicy& policy)
      : cl_(cl), m_(cl.base), pi_(policy), inner_(inner_table(cl)) {}

  void run(std::size_t max_depth, const Visitor& visit) {
    max_depth_ = max_depth;
    visit_ = &visit;
    nodes_ = 0;
    std::vector<std::size_t> prefix;
    std::vector<double> w(m_.x_count);
    for (std::size_t s = 0; s < m_.s_count; ++s) {
      if (m_.mu0[s] == 0.0) continue;
      const auto row = pi_.row(s);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (row[c] == 0.0) continue;
        const double mass = m_.mu0[s] * row[c];
        for (std::size_t x = 0; x < m_.x_count; ++x) w[x] = mass * m_.mu0_x[x];
        prefix = {s, pi_.action_of(c), pi_.command_of(c)};
        descend(0, prefix, w, mass);
      }
    }
  }

 private:
  void descend(std::size_t depth, std::vector<std::size_t>& prefix, const std::vector<double>& w,
               double p_r) {
    if (++nodes_ > kPrefixCap) throw std::length_error("prefix enumeration exceeds the prefix cap");
    (*visit_)(depth, prefix, w, p_r);
    if (depth == max_depth_) return;

    const std::size_t X = m_.x_count;
    const std::size_t n = prefix.size();
    const std::size_t s = prefix[n - 3], a = prefix[n - 2], xs = prefix[n - 1];
    const auto reduced_row = m_.outer_row(s, a, xs);
    std::vector<double> next_w(X);
    for (std::size_t sn = 0; sn < m_.s_count; ++sn) {
      // Closed-loop mass moving to sn, split over the next inner state.
      std::fill(next_w.begin(), next_w.end(), 0.0);
      for (std::size_t x = 0; x < X; ++x) {
        if (w[x] == 0.0) continue;
        const double flow = w[x] * m_.outer_row(s, a, x)[sn];
        if (flow == 0.0) continue;
        const double* step = inner_.data() + (x * X + xs) * X;
        for (std::size_t xn = 0; xn < X; ++xn) next_w[xn] += flow * step[xn];
      }
      const double next_r = p_r * reduced_row[sn];
      const auto prow = pi_.row(sn);
      for (std::size_t c = 0; c < prow.size(); ++c) {
        if (prow[c] == 0.0) continue;
        std::vector<double> child_w(X);
        double child_mass = 0.0;
        for (std::size_t xn = 0; xn < X; ++xn) {
          child_w[xn] = next_w[xn] * prow[c];
          child_mass += child_w[xn];
        }
        const double child_r = next_r * prow[c];
        if (child_mass == 0.0 && child_r == 0.0) continue;
        prefix.insert(prefix.end(), {sn, pi_.action_of(c), pi_.command_of(c)});
        descend(depth + 1, prefix, child_w, child_r);
        prefix.resize(n);
      }
    }
  }

  const ClosedLoopMdp& cl_;
  const TabularCascadeMdp& m_;
  const TabularPolicy& pi_;
  std::vector<double> inner_;
  std::size_t max_depth_ = 0;
  const Visitor* visit_ = nullptr;
  std::size_t nodes_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Policies

void TabularPolicy::validate() const {
  require(s_count > 0 && a_count > 0 && x_count > 0, "policy: cardinalities must be positive");
  require(table.size() == s_count * composite_count(), "policy: table has wrong size");
  for (std::size_t s = 0; s < s_count; ++s) {
    double sum = 0.0;
    std::size_t nonzero = 0;
    for (double p : row(s)) {
      require(std::isfinite(p) && p >= 0.0, "policy: negative or non-finite probability");
      sum += p;
      nonzero += p > 0.0 ? 1 : 0;
    }
    require(std::abs(sum - 1.0) <= kRowSumTol, "policy: row does not sum to one");
    if (deterministic) require(nonzero == 1, "policy: deterministic row is not one-hot");
  }
}

TabularPolicy TabularPolicy::from_choices(const TabularCascadeMdp& mdp,
                                          const std::vector<std::size_t>& composite) {
  require(composite.size() == mdp.s_count, "from_choices: need one choice per state");
  TabularPolicy p{mdp.s_count, mdp.a_count, mdp.x_count, {}, true};
  p.table.assign(p.s_count * p.composite_count(), 0.0);
  for (std::size_t s = 0; s < p.s_count; ++s) {
    require(composite[s] < p.composite_count(), "from_choices: composite action out of range");
    p.table[s * p.composite_count() + composite[s]] = 1.0;
  }
  return p;
}

TabularPolicy TabularPolicy::uniform(const TabularCascadeMdp& mdp) {
  TabularPolicy p{mdp.s_count, mdp.a_count, mdp.x_count, {}, false};
  p.table.assign(p.s_count * p.composite_count(), 1.0 / static_cast<double>(p.composite_count()));
  return p;
}

// ---------------------------------------------------------------------------
// Occupancy

OccupancySnapshot occupancy(const ClosedLoopMdp& cl, const TabularPolicy& policy, std::size_t t,
                            System system) {
  check_policy_matches(cl.base, policy);
  OccupancySnapshot snap;
  snap.t = t;
  PrefixEnumerator en(cl, policy);
  en.run(t, [&](std::size_t depth, const std::vector<std::size_t>& prefix,
                std::span<const double> w, double p_r) {
    if (depth != t) return;
    const double p = system == System::kReduced ? p_r : std::accumulate(w.begin(), w.end(), 0.0);
    if (p > 0.0) snap.prob[prefix] += p;
  });
  return snap;
}

// ---------------------------------------------------------------------------
// Value iteration and policy evaluation

namespace {

double q_value(const TabularCascadeMdp& m, std::size_t s, std::size_t a, std::size_t xs,
               const std::vector<double>& v) {
  const auto row = m.outer_row(s, a, xs);
  double ev = 0.0;
  for (std::size_t sn = 0; sn < m.s_count; ++sn) ev += row[sn] * v[sn];
  return m.r(s, a, xs) + m.gamma * ev;
}

}  // namespace

double bellman_residual(const TabularCascadeMdp& mdp, const std::vector<double>& values) {
  double res = 0.0;
  for (std::size_t s = 0; s < mdp.s_count; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.a_count; ++a)
      for (std::size_t xs = 0; xs < mdp.x_count; ++xs) best = std::max(best, q_value(mdp, s, a, xs, values));
    res = std::max(res, std::abs(best - values[s]));
  }
  return res;
}

ValueIterationResult value_iteration(const TabularCascadeMdp& mdp, double tol) {
  require(tol > 0.0, "value_iteration: tol must be positive");
  mdp.validate();
  ValueIterationResult out;
  std::vector<double> v(mdp.s_count, 0.0), next(mdp.s_count);
  for (;;) {
    ++out.iterations;
    double change = 0.0;
    for (std::size_t s = 0; s < mdp.s_count; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < mdp.a_count; ++a)
        for (std::size_t xs = 0; xs < mdp.x_count; ++xs) best = std::max(best, q_value(mdp, s, a, xs, v));
      next[s] = best;
      change = std::max(change, std::abs(best - v[s]));
    }
    v.swap(next);
    // ||T v - v|| <= gamma * change once the last update moved by `change`.
    if (change <= tol) break;
  }
  std::vector<std::size_t> choice(mdp.s_count, 0);
  for (std::size_t s = 0; s < mdp.s_count; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < mdp.a_count; ++a)
      for (std::size_t xs = 0; xs < mdp.x_count; ++xs) {
        const double q = q_value(mdp, s, a, xs, v);
        if (q > best) {
          best = q;
          choice[s] = a * mdp.x_count + xs;
        }
      }
  }
  out.policy = TabularPolicy::from_choices(mdp, choice);
  out.values = std::move(v);
  out.residual = bellman_residual(mdp, out.values);
  return out;
}

std::vector<double> evaluate_policy_reduced(const TabularCascadeMdp& mdp, const TabularPolicy& policy) {
  mdp.validate();
  check_policy_matches(mdp, policy);
  const auto n = static_cast<Eigen::Index>(mdp.s_count);
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < mdp.s_count; ++s) {
    const auto row = policy.row(s);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] == 0.0) continue;
      const std::size_t a = policy.action_of(c), xs = policy.command_of(c);
      rhs(s) += row[c] * mdp.r(s, a, xs);
      const auto next = mdp.outer_row(s, a, xs);
      for (std::size_t sn = 0; sn < mdp.s_count; ++sn) system(s, sn) -= mdp.gamma * row[c] * next[sn];
    }
  }
  const Eigen::VectorXd v = system.partialPivLu().solve(rhs);
  return {v.data(), v.data() + v.size()};
}

double initial_value(const TabularCascadeMdp& mdp, const std::vector<double>& values) {
  return std::inner_product(mdp.mu0.begin(), mdp.mu0.end(), values.begin(), 0.0);
}

ClosedLoopValue evaluate_policy_closed_loop(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                            std::size_t product_cap) {
  const auto& m = cl.base;
  check_policy_matches(m, policy);
  const std::size_t S = m.s_count, X = m.x_count, n = S * X;
  if (n > product_cap) throw std::length_error("closed-loop product space exceeds the configured cap");
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < S; ++s) {
    const auto prow = policy.row(s);
    for (std::size_t x = 0; x < X; ++x) {
      const std::size_t i = s * X + x;
      for (std::size_t c = 0; c < prow.size(); ++c) {
        if (prow[c] == 0.0) continue;
        const std::size_t a = policy.action_of(c), xs = policy.command_of(c);
        rhs(i) += prow[c] * m.r(s, a, x);
        const auto next = cl.row(s, a, x, xs);
        for (std::size_t j = 0; j < n; ++j) system(i, j) -= m.gamma * prow[c] * next[j];
      }
    }
  }
  const Eigen::VectorXd v = system.partialPivLu().solve(rhs);
  ClosedLoopValue out;
  out.table.assign(v.data(), v.data() + v.size());
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t x = 0; x < X; ++x) out.value += m.mu0[s] * m.mu0_x[x] * v(s * X + x);
  return out;
}

// ---------------------------------------------------------------------------
// Total variation

namespace {

void advance_marginal(const ClosedLoopMdp& cl, const TabularPolicy& policy, std::vector<double>& d) {
  const auto& m = cl.base;
  const std::size_t S = m.s_count, X = m.x_count;
  std::vector<double> next(S * X, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto prow = policy.row(s);
    for (std::size_t x = 0; x < X; ++x) {
      const double mass = d[s * X + x];
      if (mass == 0.0) continue;
      for (std::size_t c = 0; c < prow.size(); ++c) {
        if (prow[c] == 0.0) continue;
        const auto row = cl.row(s, policy.action_of(c), x, policy.command_of(c));
        for (std::size_t j = 0; j < S * X; ++j) next[j] += mass * prow[c] * row[j];
      }
    }
  }
  d.swap(next);
}

std::vector<double> initial_marginal(const TabularCascadeMdp& m) {
  std::vector<double> d(m.s_count * m.x_count);
  for (std::size_t s = 0; s < m.s_count; ++s)
    for (std::size_t x = 0; x < m.x_count; ++x) d[s * m.x_count + x] = m.mu0[s] * m.mu0_x[x];
  return d;
}

double tv_from_marginal(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                        const std::vector<double>& d, TvConvention convention) {
  const auto& m = cl.base;
  const std::size_t S = m.s_count, X = m.x_count;
  std::vector<double> diff(S);
  if (convention == TvConvention::kMarginalSup) {
    std::vector<double> mx(X, 0.0);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t x = 0; x < X; ++x) mx[x] += d[s * X + x];
    double sup = 0.0;
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < m.a_count; ++a)
        for (std::size_t xs = 0; xs < X; ++xs) {
          const auto ref = m.outer_row(s, a, xs);
          for (std::size_t sn = 0; sn < S; ++sn) diff[sn] = -ref[sn];
          for (std::size_t x = 0; x < X; ++x) {
            const auto row = m.outer_row(s, a, x);
            for (std::size_t sn = 0; sn < S; ++sn) diff[sn] += mx[x] * row[sn];
          }
          sup = std::max(sup, half_l1(diff));
        }
    return sup;
  }
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const auto prow = policy.row(s);
    for (std::size_t c = 0; c < prow.size(); ++c) {
      if (prow[c] == 0.0) continue;
      const std::size_t a = policy.action_of(c), xs = policy.command_of(c);
      const auto ref = m.outer_row(s, a, xs);
      std::fill(diff.begin(), diff.end(), 0.0);
      for (std::size_t x = 0; x < X; ++x) {
        const double mass = d[s * X + x];
        if (mass == 0.0) continue;
        const auto row = m.outer_row(s, a, x);
        for (std::size_t sn = 0; sn < S; ++sn) diff[sn] += mass * (row[sn] - ref[sn]);
      }
      total += prow[c] * half_l1(diff);
    }
  }
  return total;
}

}  // namespace

std::vector<double> closed_loop_state_marginal(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                               std::size_t t) {
  check_policy_matches(cl.base, policy);
  auto d = initial_marginal(cl.base);
  for (std::size_t i = 0; i < t; ++i) advance_marginal(cl, policy, d);
  return d;
}

std::vector<double> exact_tv_series(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                    std::size_t t_max, TvConvention convention) {
  check_policy_matches(cl.base, policy);
  if (convention == TvConvention::kHistoryConditioned) {
    auto disc = trajectory_discrepancy(cl, policy, t_max, std::max(t_max, kDeltaPHorizonCap));
    return {disc.tv_history.begin() + 1, disc.tv_history.end()};
  }
  std::vector<double> out;
  out.reserve(t_max);
  auto d = initial_marginal(cl.base);
  for (std::size_t t = 1; t <= t_max; ++t) {
    out.push_back(tv_from_marginal(cl, policy, d, convention));
    if (t < t_max) advance_marginal(cl, policy, d);
  }
  return out;
}

double exact_tv(const ClosedLoopMdp& cl, std::size_t t, const TabularPolicy& policy,
                TvConvention convention) {
  require(t >= 1, "exact_tv: TV is defined from the first transition (t >= 1)");
  return exact_tv_series(cl, policy, t, convention).back();
}

// ---------------------------------------------------------------------------
// Trajectory-distribution distance

TrajectoryDiscrepancy trajectory_discrepancy(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                             std::size_t horizon, std::size_t horizon_cap) {
  check_policy_matches(cl.base, policy);
  if (horizon > horizon_cap) throw std::length_error("trajectory_discrepancy: horizon above cap");
  const auto& m = cl.base;
  TrajectoryDiscrepancy out;
  out.delta_p.assign(horizon + 1, 0.0);
  out.tv_history.assign(horizon + 1, 0.0);
  std::vector<double> diff(m.s_count);
  PrefixEnumerator en(cl, policy);
  en.run(horizon, [&](std::size_t depth, const std::vector<std::size_t>& prefix,
                      std::span<const double> w, double p_r) {
    const double w_total = std::accumulate(w.begin(), w.end(), 0.0);
    // Both systems share the law of (s_0, a_0, x*_0), so dP(0) = 0 exactly.
    if (depth > 0) out.delta_p[depth] += std::abs(w_total - p_r);
    if (depth == horizon || w_total == 0.0) return;
    const std::size_t n = prefix.size();
    const std::size_t s = prefix[n - 3], a = prefix[n - 2], xs = prefix[n - 1];
    const auto ref = m.outer_row(s, a, xs);
    std::fill(diff.begin(), diff.end(), 0.0);
    for (std::size_t x = 0; x < m.x_count; ++x) {
      if (w[x] == 0.0) continue;
      const auto row = m.outer_row(s, a, x);
      for (std::size_t sn = 0; sn < m.s_count; ++sn) diff[sn] += w[x] * (row[sn] - ref[sn]);
    }
    out.tv_history[depth + 1] += half_l1(diff);
  });
  return out;
}

std::vector<double> exact_delta_p(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                  std::size_t horizon, std::size_t horizon_cap) {
  return trajectory_discrepancy(cl, policy, horizon, horizon_cap).delta_p;
}

// ---------------------------------------------------------------------------
// Contraction estimates

ContractionFit fit_contraction(const std::vector<InnerTrace>& traces, const Eigen::MatrixXd& p) {
  auto ip = [&p](const Eigen::VectorXd& u, const Eigen::VectorXd& v) { return u.dot(p * v); };
  double ee = 0.0, ed = 0.0, dd = 0.0, ey = 0.0, dy = 0.0, yy = 0.0;
  std::vector<double> var_sum;
  std::vector<std::size_t> var_count;
  for (const auto& tr : traces) {
    require(tr.x.size() == tr.x_star.size(), "fit_contraction: trace length mismatch");
    for (std::size_t t = 1; t < tr.x.size(); ++t) {
      const Eigen::VectorXd prev = tr.x[t - 1] - tr.x_star[t - 1];
      const Eigen::VectorXd cur = tr.x[t] - tr.x_star[t];
      const Eigen::VectorXd drift = tr.x_star[t - 1] - tr.x_star[t];
      ee += ip(prev, prev);
      ed += ip(prev, drift);
      dd += ip(drift, drift);
      ey += ip(prev, cur);
      dy += ip(drift, cur);
      yy += ip(cur, cur);
      if (var_sum.size() < t) {
        var_sum.resize(t, 0.0);
        var_count.resize(t, 0);
      }
      var_sum[t - 1] += p_norm(p, drift);
      var_count[t - 1] += 1;
    }
  }
  ContractionFit fit;
  for (std::size_t i = 0; i < var_sum.size(); ++i) {
    fit.c_hat = std::max(fit.c_hat, var_sum[i] / static_cast<double>(var_count[i]));
  }
  if (ee == 0.0 && dd == 0.0) {
    fit.exact = yy == 0.0;
    fit.beta_identified = false;
    return fit;
  }
  if (dd == 0.0) {
    fit.alpha_hat = ey / ee;
    fit.beta_identified = false;
    return fit;
  }
  if (ee == 0.0) {
    fit.beta_hat = dy / dd;
    return fit;
  }
  Eigen::Matrix2d normal;
  normal << ee, ed, ed, dd;
  const Eigen::Vector2d rhs(ey, dy);
  const Eigen::Vector2d sol = normal.completeOrthogonalDecomposition().solve(rhs);
  fit.alpha_hat = sol(0);
  fit.beta_hat = sol(1);
  return fit;
}

ContractionFit estimate_contraction(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                    std::size_t trials, std::size_t horizon, std::uint64_t seed) {
  require(trials >= 1, "estimate_contraction: trials must be >= 1");
  check_policy_matches(cl.base, policy);
  const auto& m = cl.base;
  std::vector<InnerTrace> traces(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng(seed, i, 0xC0A7);
    std::size_t s = rng.categorical(m.mu0);
    std::size_t x = rng.categorical(m.mu0_x);
    auto& tr = traces[i];
    for (std::size_t t = 0; t <= horizon; ++t) {
      const std::size_t c = rng.categorical(policy.row(s));
      const std::size_t a = policy.action_of(c), xs = policy.command_of(c);
      tr.x.push_back(m.x_values[x]);
      tr.x_star.push_back(m.x_values[xs]);
      const std::size_t sn = rng.categorical(m.outer_row(s, a, x));
      const std::size_t u = rng.categorical(cl.controller.row(xs, x));
      x = rng.categorical(m.inner_row(x, u));
      s = sn;
    }
  }
  return fit_contraction(traces, cl.controller.p_matrix);
}

// ---------------------------------------------------------------------------
// Certificates

Certificate certify(const ClosedLoopMdp& cl, const TabularPolicy& policy) {
  const auto& m = cl.base;
  check_policy_matches(m, policy);
  Certificate cert;
  auto& c = cert.constants;

  c.B = 0.0;
  for (double r : m.reward) c.B = std::max(c.B, std::abs(r));
  c.gamma = m.gamma;
  c.L = m.x_count >= 2 ? estimate_lipschitz(m) : 0.0;

  const Spectrum spec = spd_spectrum(cl.controller.p_matrix);
  c.lambda_min = spec.lambda_min;
  c.lambda_max = spec.lambda_max;
  c.rho = spec.rho();

  std::vector<bool> commanded(m.x_count, false);
  for (std::size_t s = 0; s < m.s_count; ++s) {
    const auto row = policy.row(s);
    for (std::size_t cc = 0; cc < row.size(); ++cc)
      if (row[cc] > 0.0) commanded[policy.command_of(cc)] = true;
  }
  std::vector<std::size_t> commands;
  for (std::size_t x = 0; x < m.x_count; ++x)
    if (commanded[x]) commands.push_back(x);

  const double ratio = contraction_ratio(m, cl.controller, commands);
  c.alpha = std::max(ratio, 1e-6);
  c.beta = 1.0;

  // E[||x*_t - x*_{t-1}||_P | x*_{t-1} = xp, s_t = s], worst case over xp in
  // the command support and over every s.
  const auto& p = cl.controller.p_matrix;
  c.C = 0.0;
  for (std::size_t xp : commands) {
    for (std::size_t s = 0; s < m.s_count; ++s) {
      const auto row = policy.row(s);
      double ev = 0.0;
      for (std::size_t cc = 0; cc < row.size(); ++cc) {
        if (row[cc] == 0.0) continue;
        ev += row[cc] * p_norm(p, m.x_values[policy.command_of(cc)] - m.x_values[xp]);
      }
      c.C = std::max(c.C, ev);
    }
  }

  c.e0 = 0.0;
  for (std::size_t s = 0; s < m.s_count; ++s) {
    const auto row = policy.row(s);
    for (std::size_t cc = 0; cc < row.size(); ++cc) {
      if (row[cc] == 0.0) continue;
      const auto& target = m.x_values[policy.command_of(cc)];
      for (std::size_t x = 0; x < m.x_count; ++x) {
        c.e0 += m.mu0[s] * row[cc] * m.mu0_x[x] * (m.x_values[x] - target).norm();
      }
    }
  }

  if (!std::isfinite(c.L)) {
    cert.reason = "duplicate inner embeddings with different outer rows (L infinite)";
  } else if (!(ratio < 1.0)) {
    cert.reason = "inner loop does not contract toward every command";
  } else if (spec.lambda_max < 1.0 - 1e-12) {
    cert.reason = "P must be scaled so that lambda_max >= 1";
  } else {
    cert.valid = true;
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Monte Carlo

namespace {

MonteCarloEstimate summarize(const std::vector<double>& returns, double truncation) {
  MonteCarloEstimate est;
  est.rollouts = returns.size();
  est.truncation_bound = truncation;
  const double n = static_cast<double>(returns.size());
  est.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : returns) ss += (r - est.mean) * (r - est.mean);
  est.std_error = returns.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return est;
}

double truncation(const TabularCascadeMdp& m, std::size_t horizon) {
  double bmax = 0.0;
  for (double r : m.reward) bmax = std::max(bmax, std::abs(r));
  return bmax * std::pow(m.gamma, static_cast<double>(horizon)) / (1.0 - m.gamma);
}

}  // namespace

MonteCarloEstimate monte_carlo_reduced(const TabularCascadeMdp& mdp, const TabularPolicy& policy,
                                       std::size_t rollouts, std::size_t horizon, std::uint64_t seed,
                                       unsigned workers) {
  check_policy_matches(mdp, policy);
  std::vector<double> returns(rollouts);
  parallel_for(rollouts, workers, [&](std::size_t i) {
    Rng rng(seed, i, 0x4ED);
    std::size_t s = rng.categorical(mdp.mu0);
    double g = 0.0, disc = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const std::size_t c = rng.categorical(policy.row(s));
      const std::size_t a = policy.action_of(c), xs = policy.command_of(c);
      g += disc * mdp.r(s, a, xs);
      disc *= mdp.gamma;
      s = rng.categorical(mdp.outer_row(s, a, xs));
    }
    returns[i] = g;
  });
  return summarize(returns, truncation(mdp, horizon));
}

MonteCarloEstimate monte_carlo_closed_loop(const ClosedLoopMdp& cl, const TabularPolicy& policy,
                                           std::size_t rollouts, std::size_t horizon,
                                           std::uint64_t seed, unsigned workers) {
  const auto& m = cl.base;
  check_policy_matches(m, policy);
  std::vector<double> returns(rollouts);
  parallel_for(rollouts, workers, [&](std::size_t i) {
    Rng rng(seed, i, 0xC105ED);
    std::size_t s = rng.categorical(m.mu0);
    std::size_t x = rng.categorical(m.mu0_x);
    double g = 0.0, disc = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const std::size_t c = rng.categorical(policy.row(s));
      const std::size_t a = policy.action_of(c), xs = policy.command_of(c);
      g += disc * m.r(s, a, x);
      disc *= m.gamma;
      const std::size_t sn = rng.categorical(m.outer_row(s, a, x));
      const std::size_t u = rng.categorical(cl.controller.row(xs, x));
      x = rng.categorical(m.inner_row(x, u));
      s = sn;
    }
    returns[i] = g;
  });
  return summarize(returns, truncation(m, horizon));
}

}  // namespace cxfer
