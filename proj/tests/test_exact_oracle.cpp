#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "cascade_xfer/bounds.hpp"
#include "cascade_xfer/exact_oracle.hpp"
#include "cascade_xfer/quadrotor.hpp"
#include "fixtures.hpp"

using namespace cxfer;

namespace {

TabularCascadeMdp single_state(double r, double gamma) {
  TabularCascadeMdp m;
  m.s_count = m.x_count = m.a_count = m.u_count = 1;
  m.x_values = {Eigen::VectorXd::Zero(1)};
  m.kernel_s = {1.0};
  m.kernel_x = {1.0};
  m.reward = {r};
  m.gamma = gamma;
  m.reward_bound = std::max(1.0, std::abs(r));
  m.mu0 = {1.0};
  m.mu0_x = {1.0};
  return m;
}

/// Inner state never moves, whatever u is.
TabularCascadeMdp frozen_inner(TabularCascadeMdp m) {
  std::vector<std::size_t> land;
  for (std::size_t x = 0; x < m.x_count; ++x)
    for (std::size_t u = 0; u < m.u_count; ++u) land.push_back(x);
  m.kernel_x = fixtures::one_hot_rows(land, m.x_count);
  return m;
}

RandomInstance random_instance(std::uint64_t seed) {
  Rng rng(seed);
  return generate_instance({}, rng);
}

}  // namespace

TEST_CASE("value iteration on a single absorbing state") {
  const auto m = single_state(1.0, 0.995);
  const auto vi = value_iteration(m, 1e-10);
  CHECK(vi.values[0] == doctest::Approx(200.0).epsilon(1e-10));
  CHECK(bellman_residual(m, vi.values) <= 1e-10);
}

TEST_CASE("zero reward gives zero values") {
  Rng rng(1);
  auto m = fixtures::make_mdp(3, 2, 2, rng);
  std::fill(m.reward.begin(), m.reward.end(), 0.0);
  const auto vi = value_iteration(m, 1e-12);
  for (double v : vi.values) CHECK(v == 0.0);
  for (double v : evaluate_policy_reduced(m, TabularPolicy::uniform(m))) CHECK(v == 0.0);
}

TEST_CASE("policy evaluation") {
  Rng rng(2);
  auto m = fixtures::make_mdp(4, 2, 2, rng, 0.8);
  SUBCASE("constant reward") {
    std::fill(m.reward.begin(), m.reward.end(), 0.5);
    for (double v : evaluate_policy_reduced(m, TabularPolicy::uniform(m)))
      CHECK(v == doctest::Approx(0.5 / 0.2).epsilon(1e-12));
  }
  SUBCASE("greedy policy reproduces the value iteration table") {
    const auto vi = value_iteration(m, 1e-13);
    CHECK(bellman_residual(m, vi.values) <= 1e-13);
    const auto v = evaluate_policy_reduced(m, vi.policy);
    for (std::size_t s = 0; s < m.s_count; ++s) CHECK(std::abs(v[s] - vi.values[s]) <= 1e-10);
  }
  SUBCASE("Monte Carlo agreement on a random 4-state instance") {
    const auto pol = TabularPolicy::uniform(m);
    const double exact = initial_value(m, evaluate_policy_reduced(m, pol));
    const auto mc = monte_carlo_reduced(m, pol, 100000, 200, 17, 1);
    CHECK(mc.truncation_bound < 1e-15);
    CHECK(std::abs(mc.mean - exact) <= 3.0 * mc.std_error + mc.truncation_bound);
  }
}

TEST_CASE("greedy ties go to the lowest composite index") {
  Rng rng(3);
  auto m = fixtures::make_mdp(2, 3, 2, rng);
  std::fill(m.reward.begin(), m.reward.end(), 0.25);
  // Make all outer rows equal so every composite action is optimal.
  for (std::size_t i = 0; i < m.kernel_s.size(); i += 2) {
    m.kernel_s[i] = 0.5;
    m.kernel_s[i + 1] = 0.5;
  }
  const auto vi = value_iteration(m, 1e-12);
  for (std::size_t s = 0; s < 2; ++s) CHECK(vi.policy.row(s)[0] == 1.0);
}

TEST_CASE("closed loop equals reduced model in the exact cases") {
  Rng rng(4);
  SUBCASE("one-step controller, matched start, constant reference") {
    auto m = fixtures::make_mdp(3, 3, 2, rng);
    m.mu0_x = fixtures::delta(3, 1);
    const auto cl = build_closed_loop(m, fixtures::steer(3));
    const auto pol = fixtures::constant_command(m, 1, 1);
    const double vr = initial_value(m, evaluate_policy_reduced(m, pol));
    CHECK(std::abs(evaluate_policy_closed_loop(cl, pol).value - vr) <= 1e-10);
    for (std::size_t t = 1; t <= 10; ++t) CHECK(exact_tv(cl, t, pol) == 0.0);
  }
  SUBCASE("frozen inner state, reference equal to it") {
    const auto m = [&] {
      auto mm = frozen_inner(fixtures::make_mdp(3, 2, 2, rng));
      mm.mu0_x = fixtures::delta(2, 0);
      return mm;
    }();
    const auto cl = build_closed_loop(m, fixtures::steer(2));
    const auto pol = fixtures::constant_command(m, 0);
    const double vr = initial_value(m, evaluate_policy_reduced(m, pol));
    CHECK(std::abs(evaluate_policy_closed_loop(cl, pol).value - vr) <= 1e-10);
  }
}

TEST_CASE("closed-loop value against Monte Carlo on a 3x2x2 instance") {
  Rng rng(5);
  auto m = fixtures::make_mdp(3, 2, 2, rng, 0.85);
  m.kernel_x = fixtures::random_rows(2 * 2, 2, rng);
  const auto cl = build_closed_loop(m, fixtures::steer(2, 0.3));
  const auto pol = TabularPolicy::uniform(m);
  const double exact = evaluate_policy_closed_loop(cl, pol).value;
  const auto mc = monte_carlo_closed_loop(cl, pol, 100000, 250, 21, 1);
  CHECK(std::abs(mc.mean - exact) <= 3.0 * mc.std_error + mc.truncation_bound);
}

TEST_CASE("exact TV") {
  Rng rng(6);
  SUBCASE("outer kernel independent of x") {
    auto m = fixtures::make_mdp(3, 3, 2, rng);
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t a = 0; a < 2; ++a) {
        const auto r0 = m.outer_row(s, a, 0);
        const std::vector<double> keep(r0.begin(), r0.end());
        for (std::size_t x = 1; x < 3; ++x)
          std::copy(keep.begin(), keep.end(), m.kernel_s.begin() + ((s * 2 + a) * 3 + x) * 3);
      }
    const auto cl = build_closed_loop(m, fixtures::steer(3, 0.4));
    const auto pol = TabularPolicy::uniform(m);
    for (auto conv : {TvConvention::kPolicyExpected, TvConvention::kHistoryConditioned, TvConvention::kMarginalSup})
      for (std::size_t t = 1; t <= 4; ++t) CHECK(exact_tv(cl, t, pol, conv) <= 1e-15);
  }
  SUBCASE("single discrepancy of rows (0.5, 0.5) and (1, 0)") {
    auto m = frozen_inner(fixtures::make_mdp(2, 2, 1, rng));
    m.kernel_s = {1.0, 0.0, 0.5, 0.5, 1.0, 0.0, 0.5, 0.5};
    m.mu0_x = fixtures::delta(2, 1);
    const auto cl = build_closed_loop(m, fixtures::steer(2));
    const auto pol = fixtures::constant_command(m, 0);
    for (std::size_t t = 1; t <= 5; ++t) CHECK(exact_tv(cl, t, pol) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("time zero is rejected") {
    const auto inst = random_instance(1);
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    CHECK_THROWS(exact_tv(cl, 0, TabularPolicy::uniform(inst.mdp)));
  }
}

TEST_CASE("series, history and marginals agree across entry points") {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto inst = random_instance(stream_seed(7, i));
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    const auto pol = value_iteration(inst.mdp, 1e-12).policy;
    const auto series = exact_tv_series(cl, pol, 8);
    for (std::size_t t = 1; t <= 8; ++t) CHECK(series[t - 1] == doctest::Approx(exact_tv(cl, t, pol)).epsilon(1e-13));
    for (std::size_t t = 0; t <= 8; ++t) {
      const auto marg = closed_loop_state_marginal(cl, pol, t);
      CHECK(std::abs(std::accumulate(marg.begin(), marg.end(), 0.0) - 1.0) <= 1e-10);
    }
    const auto disc = trajectory_discrepancy(cl, pol, 4);
    for (std::size_t t = 1; t <= 4; ++t)
      CHECK(disc.tv_history[t] ==
            doctest::Approx(exact_tv(cl, t, pol, TvConvention::kHistoryConditioned)).epsilon(1e-12));
    for (std::size_t t = 0; t <= 3; ++t) {
      for (auto sys : {System::kReduced, System::kClosedLoop}) {
        const auto occ = occupancy(cl, pol, t, sys);
        double total = 0.0;
        for (const auto& [key, p] : occ.prob) {
          CHECK(key.size() == 3 * (t + 1));
          total += p;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("trajectory discrepancy") {
  Rng rng(8);
  SUBCASE("horizon zero") {
    const auto inst = random_instance(2);
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    const auto dp = exact_delta_p(cl, TabularPolicy::uniform(inst.mdp), 0);
    REQUIRE(dp.size() == 1);
    CHECK(dp[0] == 0.0);
  }
  SUBCASE("identical dynamics") {
    auto m = fixtures::make_mdp(3, 2, 2, rng);
    m.mu0_x = fixtures::delta(2, 1);
    const auto cl = build_closed_loop(m, fixtures::steer(2));
    for (double v : exact_delta_p(cl, fixtures::constant_command(m, 1), 5)) CHECK(v == 0.0);
  }
  SUBCASE("increments bounded by twice the TV") {
    for (std::uint64_t i = 0; i < 30; ++i) {
      const auto inst = random_instance(stream_seed(9, i));
      const auto cl = build_closed_loop(inst.mdp, inst.controller);
      const auto pol = value_iteration(inst.mdp, 1e-12).policy;
      const auto d = trajectory_discrepancy(cl, pol, 5);
      CHECK(d.delta_p[0] == 0.0);
      double partial = 0.0;
      for (std::size_t t = 1; t <= 5; ++t) {
        partial += d.tv_history[t];
        CHECK(d.delta_p[t] - d.delta_p[t - 1] <= 2.0 * d.tv_history[t] + 1e-12);
        CHECK(d.delta_p[t] <= 2.0 * partial + 1e-12);
      }
    }
  }
  SUBCASE("horizon cap") {
    const auto inst = random_instance(3);
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    CHECK_THROWS_AS(exact_delta_p(cl, TabularPolicy::uniform(inst.mdp), kDeltaPHorizonCap + 1),
                    std::length_error);
  }
}

TEST_CASE("certified instances satisfy the bounds") {
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto inst = random_instance(stream_seed(10, i));
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    const auto pol = value_iteration(inst.mdp, 1e-12).policy;
    const auto cert = certify(cl, pol);
    if (!cert.valid) continue;
    const auto& c = cert.constants;
    const auto tv = exact_tv_series(cl, pol, 20);
    for (std::size_t t = 1; t <= 20; ++t) CHECK(tv[t - 1] <= prop1_tv_bound(c, t - 1) + 1e-12);
    const auto dp = exact_delta_p(cl, pol, 5);
    for (std::size_t t = 0; t <= 5; ++t) CHECK(dp[t] <= lemma1_delta_p_bound(c, t) + 1e-12);
    const double gap = std::abs(evaluate_policy_closed_loop(cl, pol).value -
                                initial_value(inst.mdp, evaluate_policy_reduced(inst.mdp, pol)));
    CHECK(gap <= thm2_value_gap_bound_max(c) + 1e-12);
  }
}

TEST_CASE("contraction fit") {
  SUBCASE("scalar linear loop with constant reference") {
    const double a = 0.6, xs = 2.0;
    InnerTrace tr;
    double x = -1.0;
    for (int t = 0; t < 30; ++t) {
      tr.x.push_back(Eigen::VectorXd::Constant(1, x));
      tr.x_star.push_back(Eigen::VectorXd::Constant(1, xs));
      x = a * x + (1.0 - a) * xs;
    }
    const auto fit = fit_contraction({tr}, Eigen::MatrixXd::Identity(1, 1));
    CHECK(fit.alpha_hat == doctest::Approx(a).epsilon(1e-12));
    CHECK(fit.c_hat == 0.0);
    CHECK_FALSE(fit.beta_identified);
  }
  SUBCASE("state always on the reference") {
    InnerTrace tr;
    for (int t = 0; t < 10; ++t) {
      tr.x.push_back(Eigen::VectorXd::Constant(2, 0.3));
      tr.x_star.push_back(Eigen::VectorXd::Constant(2, 0.3));
    }
    const auto fit = fit_contraction({tr}, Eigen::MatrixXd::Identity(2, 2));
    CHECK(fit.alpha_hat == 0.0);
    CHECK(fit.beta_hat == 0.0);
    CHECK(fit.c_hat == 0.0);
    CHECK(fit.exact);
  }
  SUBCASE("quadrotor attitude loop") {
    for (double kp : {1.0, 2.0, 60.0}) {
      EnvParams p;
      p.kp = kp;
      Rng rng(stream_seed(12, std::uint64_t(kp)));
      std::vector<InnerTrace> traces(5);
      for (auto& tr : traces) {
        double th = 0.0;
        for (int t = 0; t < 40; ++t) {
          const double cmd = rng.uniform(-kThetaCmdLimit, kThetaCmdLimit);
          tr.x.push_back(Eigen::VectorXd::Constant(1, th));
          tr.x_star.push_back(Eigen::VectorXd::Constant(1, cmd));
          th = step_theta(th, cmd, p);
        }
      }
      const auto fit = fit_contraction(traces, Eigen::MatrixXd::Identity(1, 1));
      CHECK(fit.alpha_hat == doctest::Approx(std::exp(-kp * p.dt)).epsilon(1e-9));
      CHECK(fit.beta_hat == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("sampled tabular loop gives a finite estimate") {
    const auto inst = random_instance(13);
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    const auto a = estimate_contraction(cl, TabularPolicy::uniform(inst.mdp), 20, 15, 3);
    const auto b = estimate_contraction(cl, TabularPolicy::uniform(inst.mdp), 20, 15, 3);
    CHECK(std::isfinite(a.alpha_hat));
    CHECK(a.c_hat >= 0.0);
    CHECK(a.alpha_hat == b.alpha_hat);
  }
}

TEST_CASE("Monte Carlo is independent of the worker count") {
  const auto inst = random_instance(14);
  const auto pol = TabularPolicy::uniform(inst.mdp);
  const auto a = monte_carlo_reduced(inst.mdp, pol, 2000, 50, 5, 1);
  const auto b = monte_carlo_reduced(inst.mdp, pol, 2000, 50, 5, 4);
  CHECK(a.mean == b.mean);
  CHECK(a.std_error == b.std_error);
}

TEST_CASE("policy helpers") {
  Rng rng(15);
  const auto m = fixtures::make_mdp(2, 3, 2, rng);
  const auto pol = TabularPolicy::from_choices(m, {5, 1});
  CHECK(pol.deterministic);
  CHECK(pol.action_of(5) == 1);
  CHECK(pol.command_of(5) == 2);
  CHECK_NOTHROW(pol.validate());
  CHECK_THROWS(TabularPolicy::from_choices(m, {6, 0}));
  auto bad = pol;
  bad.table[0] = 0.5;
  CHECK_THROWS(bad.validate());
}
