#include "cascade_xfer/quadrotor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cxfer {
namespace {

void require_finite(const QuadrotorState& s) {
  if (!std::isfinite(s.y) || !std::isfinite(s.y_dot) || !std::isfinite(s.z) || !std::isfinite(s.z_dot)) {
    throw std::invalid_argument("quadrotor: non-finite state");
  }
}

}  // namespace

QuadrotorAction QuadrotorAction::clamped() const {
  return {std::clamp(thrust, -kThrustLimit, kThrustLimit),
          std::clamp(theta_cmd, -kThetaCmdLimit, kThetaCmdLimit)};
}

void EnvParams::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("env params: dt must be positive");
  if (!(kp >= 0.0)) throw std::invalid_argument("env params: kp must be nonnegative");
  if (!(mass > 0.0)) throw std::invalid_argument("env params: mass must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("env params: gamma must lie in (0, 1)");
  if (!(arena_hi > arena_lo)) throw std::invalid_argument("env params: empty arena");
}

double EnvParams::d_max() const { return (arena_hi - arena_lo) * std::numbers::sqrt2; }

QuadrotorState step_reduced(const QuadrotorState& s, const QuadrotorAction& a, const EnvParams& p) {
  require_finite(s);
  const double lift = (p.mass * p.g + a.thrust) / p.mass;
  const double y_acc = lift * std::sin(a.theta_cmd);
  const double z_acc = lift * std::cos(a.theta_cmd) - p.g;
  QuadrotorState n;
  n.y_dot = s.y_dot + y_acc * p.dt;
  n.z_dot = s.z_dot + z_acc * p.dt;
  n.y = s.y + n.y_dot * p.dt;
  n.z = s.z + n.z_dot * p.dt;
  return n;
}

double step_theta(double theta, double theta_cmd, const EnvParams& p) {
  const double decay = std::exp(-p.kp * p.dt);
  return decay * theta + (1.0 - decay) * theta_cmd;
}

QuadrotorFullState step_full(const QuadrotorFullState& fs, const QuadrotorAction& a, const EnvParams& p) {
  if (!std::isfinite(fs.theta)) throw std::invalid_argument("quadrotor: non-finite attitude");
  QuadrotorFullState n;
  n.base = step_reduced(fs.base, {a.thrust, fs.theta}, p);
  n.theta = step_theta(fs.theta, a.theta_cmd, p);
  return n;
}

bool at_target(double y, double z, const EnvParams& p) {
  return std::max(std::abs(y - p.target_y), std::abs(z - p.target_z)) <= p.target_tol;
}

bool out_of_bounds(double y, double z, const EnvParams& p) {
  return y < p.arena_lo || y > p.arena_hi || z < p.arena_lo || z > p.arena_hi;
}

double reward(double y, double z, const EnvParams& p) {
  const double dist = std::hypot(y - p.target_y, z - p.target_z);
  return (at_target(y, z, p) ? 1.0 : 0.0) - dist / p.d_max() -
         (out_of_bounds(y, z, p) ? p.boundary_penalty : 0.0);
}

std::string_view to_string(EnvKind kind) { return kind == EnvKind::kReduced ? "reduced" : "full"; }

EnvKind env_kind_from_string(std::string_view s) {
  if (s == "reduced") return EnvKind::kReduced;
  if (s == "full") return EnvKind::kFull;
  throw std::invalid_argument("unknown env kind: " + std::string(s));
}

ReducedQuadrotorEnv::ReducedQuadrotorEnv(EnvParams params) : params_(params) { params_.validate(); }

QuadrotorState ReducedQuadrotorEnv::step(const QuadrotorState& s, const QuadrotorAction& a) const {
  return step_reduced(s, a.clamped(), params_);
}

FullQuadrotorEnv::FullQuadrotorEnv(EnvParams params) : params_(params) { params_.validate(); }

QuadrotorFullState FullQuadrotorEnv::step(const QuadrotorFullState& s, const QuadrotorAction& a) const {
  return step_full(s, a.clamped(), params_);
}

QuadrotorState sample_initial_state(Rng& rng, const EnvParams& p) {
  const double lo = p.arena_lo + 0.5, hi = p.arena_hi - 0.5;
  QuadrotorState s;
  s.y = rng.uniform(lo, hi);
  s.z = rng.uniform(lo, hi);
  return s;
}

namespace {

/// Shared episode loop; `advance` maps (state, theta, action) to the next
/// (state, theta) and `attitude` reports the logged theta.
template <typename Advance>
TrajectoryLog run_episode(EnvKind kind, const EnvParams& p, const QuadPolicyFn& policy,
                          QuadrotorState s, double theta, Rng& rng, std::size_t horizon,
                          Advance&& advance) {
  if (horizon > p.max_steps) throw std::invalid_argument("rollout: horizon exceeds max_steps");
  TrajectoryLog log;
  log.kind = kind;
  log.rows.reserve(horizon);
  double disc = 1.0, ret = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    const QuadrotorAction a = policy(s, rng).clamped();
    const double r = reward(s.y, s.z, p);
    ret += disc * r;
    disc *= p.gamma;
    const double logged_theta = kind == EnvKind::kReduced ? a.theta_cmd : theta;
    log.rows.push_back({t, s.y, s.y_dot, s.z, s.z_dot, logged_theta, a.theta_cmd, a.thrust, r, ret});
    if (out_of_bounds(s.y, s.z, p)) {
      log.termination = Termination::kBoundary;
      break;
    }
    if (at_target(s.y, s.z, p)) {
      log.termination = Termination::kTarget;
      break;
    }
    advance(s, theta, a);
    if (!std::isfinite(s.y) || !std::isfinite(s.z)) throw std::runtime_error("rollout: state diverged");
  }
  return log;
}

}  // namespace

TrajectoryLog rollout_from(const ReducedQuadrotorEnv& env, const QuadPolicyFn& policy,
                           const QuadrotorState& initial, Rng& rng, std::size_t horizon) {
  return run_episode(EnvKind::kReduced, env.params(), policy, initial, 0.0, rng, horizon,
                     [&](QuadrotorState& s, double&, const QuadrotorAction& a) { s = env.step(s, a); });
}

TrajectoryLog rollout_from(const FullQuadrotorEnv& env, const QuadPolicyFn& policy,
                           const QuadrotorFullState& initial, Rng& rng, std::size_t horizon) {
  return run_episode(EnvKind::kFull, env.params(), policy, initial.base, initial.theta, rng, horizon,
                     [&](QuadrotorState& s, double& theta, const QuadrotorAction& a) {
                       const auto next = env.step({s, theta}, a);
                       s = next.base;
                       theta = next.theta;
                     });
}

TrajectoryLog rollout(EnvKind kind, const QuadPolicyFn& policy, const EnvParams& p, std::uint64_t seed,
                      std::size_t horizon) {
  Rng rng(seed);
  const QuadrotorState s0 = sample_initial_state(rng, p);
  if (kind == EnvKind::kReduced) return rollout_from(ReducedQuadrotorEnv(p), policy, s0, rng, horizon);
  return rollout_from(FullQuadrotorEnv(p), policy, {s0, 0.0}, rng, horizon);
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_csv(const TrajectoryLog& log, std::ostream& os) {
  os << "t,y,y_dot,z,z_dot,theta,theta_cmd,thrust,reward,discounted_return\n";
  for (const auto& r : log.rows) {
    os << r.t << ',' << format_g17(r.y) << ',' << format_g17(r.y_dot) << ',' << format_g17(r.z) << ','
       << format_g17(r.z_dot) << ',' << format_g17(r.theta) << ',' << format_g17(r.theta_cmd) << ','
       << format_g17(r.thrust) << ',' << format_g17(r.reward) << ',' << format_g17(r.discounted_return)
       << '\n';
  }
}

}  // namespace cxfer
