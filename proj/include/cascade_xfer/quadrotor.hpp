#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "cascade_xfer/rng.hpp"

namespace cxfer {

inline constexpr double kThetaCmdLimit = std::numbers::pi / 8.0;
inline constexpr double kThrustLimit = 1.0;

/// Planar position (m) and velocity (m/s).
struct QuadrotorState {
  double y = 0.0;
  double y_dot = 0.0;
  double z = 0.0;
  double z_dot = 0.0;
};

/// Reduced state plus attitude (rad).
struct QuadrotorFullState {
  QuadrotorState base;
  double theta = 0.0;
};

/// Thrust offset around hover and commanded attitude.
struct QuadrotorAction {
  double thrust = 0.0;
  double theta_cmd = 0.0;

  QuadrotorAction clamped() const;
};

struct EnvParams {
  double mass = 1.0;
  double g = 9.81;
  double dt = 0.05;
  double kp = 0.0;
  double target_y = 9.0;
  double target_z = 9.0;
  double target_tol = 0.05;
  double boundary_penalty = 5000.0;
  double gamma = 0.995;
  double arena_lo = 0.0;
  double arena_hi = 10.0;
  std::size_t max_steps = 400;

  void validate() const;
  /// Largest distance inside the arena.
  double d_max() const;
  /// |r| bound: target bonus + normalized distance + boundary penalty.
  double reward_bound() const { return 2.0 + boundary_penalty; }
};

/// One semi-implicit Euler step with attitude as an input.
QuadrotorState step_reduced(const QuadrotorState& s, const QuadrotorAction& a, const EnvParams& p);

/// Exact discretization of theta_dot = -kp (theta - theta_cmd) over dt.
double step_theta(double theta, double theta_cmd, const EnvParams& p);

/// Outer step with the current attitude, then the attitude update.
QuadrotorFullState step_full(const QuadrotorFullState& fs, const QuadrotorAction& a, const EnvParams& p);

double reward(double y, double z, const EnvParams& p);
bool at_target(double y, double z, const EnvParams& p);
bool out_of_bounds(double y, double z, const EnvParams& p);

enum class EnvKind { kReduced, kFull };
std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view s);

/// Reduced-order environment: attitude is commanded directly.
class ReducedQuadrotorEnv {
 public:
  explicit ReducedQuadrotorEnv(EnvParams params);
  const EnvParams& params() const { return params_; }
  QuadrotorState step(const QuadrotorState& s, const QuadrotorAction& a) const;

 private:
  EnvParams params_;
};

/// Full-state environment: attitude follows the proportional inner loop.
class FullQuadrotorEnv {
 public:
  explicit FullQuadrotorEnv(EnvParams params);
  const EnvParams& params() const { return params_; }
  QuadrotorFullState step(const QuadrotorFullState& s, const QuadrotorAction& a) const;

 private:
  EnvParams params_;
};

/// Map from observed outer state to an action; may draw from the rng.
using QuadPolicyFn = std::function<QuadrotorAction(const QuadrotorState&, Rng&)>;

struct TrajectoryRow {
  std::size_t t = 0;
  double y = 0.0, y_dot = 0.0, z = 0.0, z_dot = 0.0;
  double theta = 0.0;
  double theta_cmd = 0.0;
  double thrust = 0.0;
  double reward = 0.0;
  double discounted_return = 0.0;
};

enum class Termination { kTarget, kBoundary, kHorizon };

struct TrajectoryLog {
  EnvKind kind = EnvKind::kReduced;
  std::vector<TrajectoryRow> rows;
  Termination termination = Termination::kHorizon;

  double discounted_return() const { return rows.empty() ? 0.0 : rows.back().discounted_return; }
};

/// Positions uniform on [0.5, 9.5]^2, zero velocity.
QuadrotorState sample_initial_state(Rng& rng, const EnvParams& p);

/// Episode from `initial`. At each step the reward of the current position is
/// collected and logged; the episode stops after logging a target or boundary
/// state, or after `horizon` rows. The rng is only used by the policy.
TrajectoryLog rollout_from(const ReducedQuadrotorEnv& env, const QuadPolicyFn& policy,
                           const QuadrotorState& initial, Rng& rng, std::size_t horizon);
TrajectoryLog rollout_from(const FullQuadrotorEnv& env, const QuadPolicyFn& policy,
                           const QuadrotorFullState& initial, Rng& rng, std::size_t horizon);

/// Seeded episode: the initial state is the first draw of Rng(seed), theta_0 = 0,
/// and the policy consumes the same stream afterwards. Throws when
/// horizon > max_steps.
TrajectoryLog rollout(EnvKind kind, const QuadPolicyFn& policy, const EnvParams& p,
                      std::uint64_t seed, std::size_t horizon);

/// CSV with header t,y,y_dot,z,z_dot,theta,theta_cmd,thrust,reward,discounted_return.
void write_csv(const TrajectoryLog& log, std::ostream& os);

/// Formats a double with 17 significant digits.
std::string format_g17(double v);

}  // namespace cxfer
