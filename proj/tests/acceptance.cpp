// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "cascade_xfer/bounds.hpp"
#include "cascade_xfer/harness.hpp"
#include "fixtures.hpp"

using namespace cxfer;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, const char* name, bool ok, const std::string& detail) {
  if (!ok) ++g_failures;
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void guarded(int id, const char* name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

BoundConstants random_constants(Rng& rng) {
  BoundConstants c;
  c.B = rng.uniform(0.1, 10.0);
  c.L = rng.uniform(0.0, 3.0);
  c.gamma = rng.uniform(0.05, 0.99);
  c.alpha = rng.uniform(0.01, 0.95);
  c.beta = rng.uniform(0.0, 2.0);
  c.C = rng.uniform(0.0, 1.0);
  c.lambda_min = rng.uniform(0.1, 1.0);
  c.lambda_max = 1.0;
  c.rho = std::sqrt(c.lambda_max / c.lambda_min);
  c.e0 = rng.uniform(0.0, 2.0);
  return c;
}

// 1. Bound inequalities over random certified instances.
void criterion1() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg;
  cfg.mode = "tabular-verify";
  cfg.tabular.instances = 100;
  cfg.tabular.tv_horizon = 20;
  cfg.tabular.delta_p_horizon = 6;
  const auto r = run_tabular_verify(cfg);
  const double secs = seconds_since(t0);
  const bool ok = r.instances.size() >= 100 && r.violation_count == 0 && r.pass && secs < 300.0;
  report(1, "tabular bound verification", ok,
         fmt("%zu instances, %zu violations, %.1f s", r.instances.size(), r.violation_count, secs));
}

// 2. Deterministic instance, matched start, one-step controller, constant reference.
void criterion2() {
  Rng rng(202);
  auto m = fixtures::make_mdp(4, 3, 2, rng);
  std::vector<std::size_t> next;
  for (std::size_t i = 0; i < m.s_count * m.a_count * m.x_count; ++i)
    next.push_back(rng.index(m.s_count));
  m.kernel_s = fixtures::one_hot_rows(next, m.s_count);
  m.mu0_x = fixtures::delta(3, 2);
  const auto cl = build_closed_loop(m, fixtures::steer(3));
  const auto pol = fixtures::constant_command(m, 2, 1);
  const double vr = initial_value(m, evaluate_policy_reduced(m, pol));
  const double vk = evaluate_policy_closed_loop(cl, pol).value;
  const double gap = std::abs(vk - vr);
  report(2, "zero-gap exact case", gap <= 1e-10, fmt("|V_K - V_R| = %.3g", gap));
}

// 3. Recursion identities.
void criterion3() {
  Rng rng(303);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto c = random_constants(rng);
    double partial = 0.0;
    for (std::size_t t = 1; t <= 10; ++t) {
      partial += prop1_tv_bound(c, t - 1);
      worst = std::max(worst, std::abs(lemma1_delta_p_bound(c, t) - 2.0 * partial));
    }
  }
  BoundConstants c;
  c.alpha = 0.7;
  c.beta = 1.3;
  const double C = 0.4;
  const double limit = c.beta * C / (1.0 - c.alpha);
  const double iss_err = std::abs(iss_unroll(c, 2.0, std::vector<double>(10000, C)) - limit);
  report(3, "recursion identities", worst <= 1e-10 && iss_err <= 1e-8,
         fmt("max lemma1 mismatch %.3g, ISS limit error %.3g", worst, iss_err));
}

// 4. Attitude error against the closed-form recursion.
void criterion4() {
  double worst = 0.0;
  for (double kp : {1.0, 2.0, 60.0}) {
    EnvParams p;
    p.kp = kp;
    const double a = std::exp(-kp * p.dt);
    // Constant command from rest.
    QuadrotorFullState fs{{5.0, 0.0, 5.0, 0.0}, 0.0};
    const double cmd = std::numbers::pi / 8;
    for (int t = 1; t <= 20; ++t) {
      fs = step_full(fs, {0.0, cmd}, p);
      worst = std::max(worst, std::abs((fs.theta - cmd) - std::pow(a, t) * (0.0 - cmd)));
    }
    // Varying commands through the discrepancy recursion.
    Rng rng(stream_seed(404, std::uint64_t(kp)));
    fs = {{5.0, 0.0, 5.0, 0.0}, 0.0};
    double prev = rng.uniform(-0.4, 0.4);
    double e = fs.theta - prev;
    for (int t = 1; t <= 20; ++t) {
      fs = step_full(fs, {0.0, prev}, p);
      const double next = rng.uniform(-0.4, 0.4);
      e = a * e + (prev - next);
      worst = std::max(worst, std::abs((fs.theta - next) - e));
      prev = next;
    }
  }
  report(4, "inner-loop exactness", worst <= 1e-12, fmt("max per-step error %.3g", worst));
}

// 5 and 6. Quadrotor sweep with a trained policy.
SweepResult g_sweep;
PolicySpec g_policy;
ExperimentConfig g_sweep_cfg;

void criteria5and6() {
  const auto t0 = Clock::now();
  g_sweep_cfg = ExperimentConfig{};
  g_sweep_cfg.kp_list = {1.0, 2.0, 5.0, 10.0, 20.0, 60.0};
  g_sweep_cfg.trials = 100;
  const auto trained = obtain_policy(ReducedQuadrotorEnv(g_sweep_cfg.env), g_sweep_cfg.train);
  g_policy = trained.policy;
  g_sweep = run_quad_sweep(g_sweep_cfg, g_policy);
  const double secs = seconds_since(t0);

  const KpRow* k1 = nullptr;
  const KpRow* k60 = nullptr;
  for (const auto& r : g_sweep.rows) {
    if (r.kp == 1.0) k1 = &r;
    if (r.kp == 60.0) k60 = &r;
    std::printf("  kp=%g rel_gap=%.6g stderr=%.3g theta_err=%.6g\n", r.kp, r.rel_gap, r.std_error,
                r.theta_error_time_avg);
  }
  std::string detail;
  const bool trend = check_gap_trend(g_sweep, 2.0, &detail);
  const double gap_ratio = k60->rel_gap / k1->rel_gap;
  report(5, "quadrotor gap trend", trend && gap_ratio <= 0.25 && secs < 900.0,
         fmt("trend %s, gap(60)/gap(1) = %.4g, %.1f s incl. training%s%s", trend ? "ok" : "broken",
             gap_ratio, secs, detail.empty() ? "" : ", ", detail.c_str()));
  const double theta_ratio = k60->theta_error_time_avg / k1->theta_error_time_avg;
  report(6, "orientation error trend", theta_ratio <= 0.10, fmt("err(60)/err(1) = %.4g", theta_ratio));
}

// 7. Byte-identical outputs on rerun and across worker counts.
void criterion7() {
  const auto base = fs::temp_directory_path() / "cxfer_acceptance_det";
  fs::remove_all(base);
  bool same = true;
  std::size_t compared = 0;

  auto cfg = g_sweep_cfg;
  cfg.trials = 30;
  const auto policy = obtain_policy(ReducedQuadrotorEnv(cfg.env), [&] {
                        auto t = cfg.train;
                        t.iterations = 5;
                        t.population = 24;
                        t.rollouts_per_candidate = 6;
                        return t;
                      }()).policy;
  std::vector<fs::path> dirs;
  for (unsigned workers : {1u, 1u, 3u}) {
    cfg.workers = workers;
    const auto dir = base / std::to_string(dirs.size());
    emit_figures(run_quad_sweep(cfg, policy), cfg, policy, dir);
    ExperimentConfig tab = cfg;
    tab.mode = "tabular-verify";
    tab.tabular.instances = 10;
    std::ofstream(dir / "tabular_report.json") << to_json(run_tabular_verify(tab)).dump(2);
    dirs.push_back(dir);
  }
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const auto name = entry.path().filename();
    for (std::size_t i = 1; i < dirs.size(); ++i) {
      same = same && fs::exists(dirs[i] / name) && slurp(entry.path()) == slurp(dirs[i] / name);
      ++compared;
    }
  }
  fs::remove_all(base);
  report(7, "determinism", same && compared >= 12,
         fmt("%zu file comparisons over reruns and worker counts 1/3", compared));
}

// 8. Oracle cross-checks.
void criterion8() {
  std::size_t mc_ok = 0, mc_total = 0;
  double worst_z = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    Rng rng(stream_seed(808, i));
    const auto inst = generate_instance({}, rng);
    const auto cl = build_closed_loop(inst.mdp, inst.controller);
    const auto pol = TabularPolicy::uniform(inst.mdp);
    const double exact_k = evaluate_policy_closed_loop(cl, pol).value;
    const double exact_r = initial_value(inst.mdp, evaluate_policy_reduced(inst.mdp, pol));
    const auto mk = monte_carlo_closed_loop(cl, pol, 100000, 300, stream_seed(809, i));
    const auto mr = monte_carlo_reduced(inst.mdp, pol, 100000, 300, stream_seed(810, i));
    for (auto [exact, mc] : {std::pair{exact_k, mk}, std::pair{exact_r, mr}}) {
      const double z = (std::abs(mc.mean - exact) - mc.truncation_bound) / mc.std_error;
      worst_z = std::max(worst_z, z);
      mc_ok += z <= 3.0;
      ++mc_total;
    }
  }

  // Deterministic 2-state instances: VI against the best length-30 return
  // over all stationary deterministic policies.
  double worst_vi = 0.0, worst_slack = std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng rng(stream_seed(820, i));
    const std::size_t X = 1 + rng.index(3);
    const std::size_t A = 1 + rng.index(3);
    auto m = fixtures::make_mdp(2, X, A, rng, rng.uniform(0.5, 0.95));
    std::vector<std::size_t> next;
    for (std::size_t k = 0; k < 2 * A * X; ++k) next.push_back(rng.index(2));
    m.kernel_s = fixtures::one_hot_rows(next, 2);
    for (std::size_t k = 0; k < m.reward.size(); ++k) m.reward[k] = rng.uniform(-1.0, 1.0);
    const auto vi = value_iteration(m, 1e-13);
    const std::size_t composite = A * X;
    auto step = [&](std::size_t s, std::size_t c) {
      const std::size_t a = c / X, x = c % X;
      const std::size_t row = (s * A + a) * X + x;
      return std::pair{next[row], m.reward[row]};
    };
    for (std::size_t s0 = 0; s0 < 2; ++s0) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t c0 = 0; c0 < composite; ++c0)
        for (std::size_t c1 = 0; c1 < composite; ++c1) {
          const std::size_t choice[2] = {c0, c1};
          std::size_t s = s0;
          double ret = 0.0, g = 1.0;
          for (int t = 0; t < 30; ++t) {
            const auto [n, r] = step(s, choice[s]);
            ret += g * r;
            g *= m.gamma;
            s = n;
          }
          best = std::max(best, ret);
        }
      const double tol = 1e-8 + m.reward_bound * std::pow(m.gamma, 30.0) / (1.0 - m.gamma);
      const double err = std::abs(vi.values[s0] - best);
      worst_vi = std::max(worst_vi, err);
      worst_slack = std::min(worst_slack, tol - err);
    }
  }
  const bool ok = mc_ok == mc_total && worst_slack >= 0.0;
  report(8, "oracle cross-checks", ok,
         fmt("MC %zu/%zu within 3 SE (max z %.2f), VI vs enumeration max error %.3g, min slack %.3g",
             mc_ok, mc_total, worst_z, worst_vi, worst_slack));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  guarded(1, "tabular bound verification", criterion1);
  guarded(2, "zero-gap exact case", criterion2);
  guarded(3, "recursion identities", criterion3);
  guarded(4, "inner-loop exactness", criterion4);
  guarded(5, "quadrotor gap trend", criteria5and6);
  guarded(7, "determinism", criterion7);
  guarded(8, "oracle cross-checks", criterion8);
  std::printf("%d failing criteria, %.1f s total\n", g_failures, seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
