// Inverse dynamics feed-forward, effort-interpolated proportional gains, and
// the simulated proportional servo.
#pragma once

#include "hop/robot_model.hpp"

#include <stdexcept>

namespace hop {

struct JointTrajPoint {
  VecX q;
  VecX qd;
  VecX qdd;
};

JointTrajPoint static_point(const VecX& q);

struct SupportCoefficients {
  double left = 1.0;
  double right = 1.0;

  bool operator==(const SupportCoefficients&) const = default;
};

struct EffortVector {
  VecX e;

  EffortVector() : e(VecX::Zero(kNumJoints)) {}
  explicit EffortVector(VecX v);
  /// Clamps every component into [0, 1].
  void clamp();
};

class DynamicsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Recursive Newton-Euler with `base_link` held fixed. Gravity is expressed
/// in trunk coordinates (m/s^2). Torques follow each joint's own sign
/// convention regardless of traversal direction.
VecX inverse_dynamics_fixed_base(const RobotModel& model, const JointTrajPoint& pt, const Vec3& gravity,
                                 int base_link);

/// Support-blended inverse dynamics. Humanoid models run one pass per sole
/// as the fixed base and mix them by the normalized support coefficients;
/// models without legs use the trunk as the base. Throws DynamicsError if
/// both coefficients are zero.
VecX inverse_dynamics(const RobotModel& model, const JointTrajPoint& pt, const Vec3& gravity,
                      const SupportCoefficients& support);

struct ServoParams {
  double stiffness = 12.0;           // N*m/rad at max_p_gain
  double max_p_gain = 32.0;          // raw
  int ticks_per_rev = 4096;
  double torque_limit = 8.4;         // N*m
  double viscous_friction = 1.0;     // N*m*s/rad
  double rotor_inertia = 0.005;      // kg*m^2
  double max_gain_step = 4.0;        // raw units per control tick

  /// N*m/rad per raw gain unit.
  double gain_scale() const { return stiffness / max_p_gain; }
  void validate() const;
};

ServoParams servo_params(const ServoSpec& spec);

struct ServoState {
  double position = 0.0;  // rad
  double velocity = 0.0;  // rad/s
  bool torque_enabled = true;
  int goal_position = 2048;  // ticks
  double p_gain = 0.0;       // raw
};

double torque_to_position_offset(double tau, const ServoParams& params);

/// Linear map of effort in [0, 1] (clamped) onto [0, max_p_gain].
double effective_p_gain(double effort, const ServoParams& params);

/// Rate limit on successive gain commands.
class GainSlewLimiter {
 public:
  explicit GainSlewLimiter(double initial = 0.0) : current_(initial) {}
  double step(double target, double max_step);
  double current() const { return current_; }

 private:
  double current_;
};

/// Motor torque the servo applies in `s` (before the load).
double servo_motor_torque(const ServoState& s, const ServoParams& params);

/// Advances the servo by dt in (0, 20 ms]: P control on the tick-quantized
/// error, viscous braking, torque clamp, rotor integration with the load.
ServoState servo_step(const ServoState& s, const ServoParams& params, double load_torque, double dt);

inline constexpr int kTickCenter = 2048;
inline constexpr int kTicksPerRev = 4096;

int rad_to_ticks(double a);
double ticks_to_rad(int ticks);

}  // namespace hop
