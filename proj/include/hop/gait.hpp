// Central pattern generated walking gait with fused-angle feedback.
#pragma once

#include "hop/dynamics.hpp"
#include "hop/robot_model.hpp"

#include <json.hpp>

#include <array>

namespace hop {

struct GaitCommand {
  double vx = 0.0;     // forward, [-1, 1]
  double vy = 0.0;     // left, [-1, 1]
  double omega = 0.0;  // counter-clockwise turn, [-1, 1]
  bool walk = false;

  GaitCommand clamped() const;
  /// Left/right mirror image (vy and omega negated).
  GaitCommand mirrored() const;
  bool operator==(const GaitCommand&) const = default;
};

struct FeedbackGains {
  double pitch_arm = 0.0;
  double pitch_foot = 0.0;
  double pitch_hip = 0.0;
  double roll_foot = 0.0;
  double roll_hip = 0.0;
};

struct GaitConfig {
  double frequency = 2.4;  // Hz

  AbstractLegPose halt_leg_left{0.18, 0.0, 0.0, 0.0, 0.0, 0.0};
  AbstractLegPose halt_leg_right{0.18, 0.0, 0.0, 0.0, 0.0, 0.0};
  AbstractArmPose halt_arm_left{0.1, 0.12, 0.0};
  AbstractArmPose halt_arm_right{0.1, -0.12, 0.0};

  double lift = 0.12;        // extension pulse during swing
  double swing_x = 0.2;      // rad of leg_angle_y per unit vx
  double swing_y = 0.1;      // rad of leg_angle_x per unit vy
  double swing_turn = 0.2;   // rad of leg_angle_z per unit omega
  double rocking = 0.04;     // rad of lateral rocking
  double arm_swing = 0.15;   // rad of arm_angle_y per unit vx

  FeedbackGains gains;
  double feedback_cutoff = 3.8;  // Hz
  double expected_pitch = 0.0;
  double expected_roll = 0.0;
  /// Fraction of each fused-angle foot channel routed to the inverse-space
  /// foot tilt; the remainder goes to the abstract foot angle.
  double foot_inverse_share = 0.5;

  /// Support ramp width as a fraction of the gait cycle.
  double support_ramp = 0.1;

  double leg_effort = 0.7;
  double arm_effort = 0.25;
  double head_effort = 0.3;

  void validate() const;
};

GaitConfig gait_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GaitConfig& cfg);

/// wrap(mu + 2*pi*f*dt). Throws std::invalid_argument unless dt in (0, 20 ms].
double step_phase(double mu, double f, double dt);

struct LimbPoses {
  AbstractLegPose leg_left, leg_right;
  AbstractArmPose arm_left, arm_right;
};

/// Halt pose plus the CPG waveforms scaled by `amplitude` in [0, 1].
/// cmd.walk = false returns the halt pose exactly.
LimbPoses open_loop_waveform(double mu, const GaitCommand& cmd, const GaitConfig& cfg, double amplitude = 1.0);

struct FeedbackCorrections {
  double arm_angle_y = 0.0;
  double leg_angle_x = 0.0;
  double leg_angle_y = 0.0;
  double foot_angle_x = 0.0;
  double foot_angle_y = 0.0;
  double foot_tilt_x = 0.0;  // inverse space, rad about trunk x
  double foot_tilt_y = 0.0;  // inverse space, rad about trunk y

  bool operator==(const FeedbackCorrections&) const = default;
};

/// Corrections for already filtered deviations from the expected attitude.
FeedbackCorrections feedback_from_deviation(double pitch_dev, double roll_dev, const GaitConfig& cfg);

/// Steady-state corrections for an estimate (deviation taken unfiltered).
FeedbackCorrections feedback_corrections(const FusedAngles& est, const GaitConfig& cfg);

/// First-order low-pass filters on the fused pitch and roll deviations.
class DeviationFilter {
 public:
  void update(const FusedAngles& est, const GaitConfig& cfg, double dt);
  double pitch() const { return pitch_; }
  double roll() const { return roll_; }
  void reset() { pitch_ = roll_ = 0.0; }

 private:
  double pitch_ = 0.0;
  double roll_ = 0.0;
};

/// Support coefficient of one leg at its own phase (swing in (0, pi)).
double leg_support(double leg_phase, double ramp_fraction);
SupportCoefficients support_coefficients(double mu, double amplitude, const GaitConfig& cfg);

struct GaitState {
  double phase = 0.0;
  double phase_total = 0.0;  // unwrapped
  double amplitude = 0.0;
  bool walking = false;
  GaitCommand active;  // latched command that shapes the waveform
  DeviationFilter deviation;
  VecX last_command = VecX::Zero(kNumJoints);
};

struct GaitOutput {
  GaitState state;
  VecX q;
  EffortVector effort;
  SupportCoefficients support;
  LimbPoses abstract;
  bool clamped = false;      // some joint command was limited
  bool ik_fallback = false;  // IK failed, previous command reused
};

GaitState initial_gait_state(const RobotModel& model, const GaitConfig& cfg);

/// Halt pose mapped to joint space.
VecX halt_joint_pose(const RobotModel& model, const GaitConfig& cfg);

GaitOutput gait_step(const GaitState& state, const GaitCommand& cmd, const FusedAngles& est, const RobotModel& model,
                     const GaitConfig& cfg, double dt);

}  // namespace hop
