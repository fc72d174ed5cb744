#include "hop/gait.hpp"

#include "json_read.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hop {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double clamp1(double v) { return std::isfinite(v) ? std::clamp(v, -1.0, 1.0) : 0.0; }

AbstractLegPose leg_wave(AbstractLegPose p, double phase, const GaitCommand& c, const GaitConfig& cfg, double s) {
  const double sp = std::sin(phase), cp = std::cos(phase);
  p.extension += s * cfg.lift * std::max(0.0, sp);
  p.angle_y += s * cfg.swing_x * c.vx * cp;
  p.angle_x += s * (cfg.rocking * sp - cfg.swing_y * c.vy * cp);
  p.angle_z += s * (-cfg.swing_turn * c.omega * cp);
  return p;
}

AbstractArmPose arm_wave(AbstractArmPose p, double phase, const GaitCommand& c, const GaitConfig& cfg, double s) {
  p.angle_y -= s * cfg.arm_swing * c.vx * std::cos(phase);
  return p;
}

double opt(const json& j, const char* key, double def, const std::string& path) {
  return j.contains(key) ? detail::number_field(j, key, path) : def;
}

AbstractLegPose leg_from_json(const json& j, const AbstractLegPose& def, const std::string& path) {
  AbstractLegPose p;
  p.extension = opt(j, "extension", def.extension, path);
  p.angle_x = opt(j, "angle_x", def.angle_x, path);
  p.angle_y = opt(j, "angle_y", def.angle_y, path);
  p.angle_z = opt(j, "angle_z", def.angle_z, path);
  p.foot_angle_x = opt(j, "foot_angle_x", def.foot_angle_x, path);
  p.foot_angle_y = opt(j, "foot_angle_y", def.foot_angle_y, path);
  return p;
}

AbstractArmPose arm_from_json(const json& j, const AbstractArmPose& def, const std::string& path) {
  AbstractArmPose p;
  p.extension = opt(j, "extension", def.extension, path);
  p.angle_x = opt(j, "angle_x", def.angle_x, path);
  p.angle_y = opt(j, "angle_y", def.angle_y, path);
  return p;
}

json leg_json(const AbstractLegPose& p) {
  return {{"extension", p.extension}, {"angle_x", p.angle_x},         {"angle_y", p.angle_y},
          {"angle_z", p.angle_z},     {"foot_angle_x", p.foot_angle_x}, {"foot_angle_y", p.foot_angle_y}};
}

json arm_json(const AbstractArmPose& p) {
  return {{"extension", p.extension}, {"angle_x", p.angle_x}, {"angle_y", p.angle_y}};
}

}  // namespace

GaitCommand GaitCommand::clamped() const { return {clamp1(vx), clamp1(vy), clamp1(omega), walk}; }

GaitCommand GaitCommand::mirrored() const { return {vx, -vy, -omega, walk}; }

void GaitConfig::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("gait config: " + what); };
  if (!(frequency > 0.0)) bad("frequency must be > 0");
  for (double a : {lift, swing_x, swing_y, swing_turn, rocking, arm_swing}) {
    if (!(a >= 0.0)) bad("amplitudes must be non-negative");
  }
  if (!(feedback_cutoff > 0.0)) bad("feedback_cutoff must be > 0");
  if (!(foot_inverse_share >= 0.0 && foot_inverse_share <= 1.0)) bad("foot_inverse_share must lie in [0, 1]");
  if (!(support_ramp > 0.0 && support_ramp <= 0.5)) bad("support_ramp must lie in (0, 0.5]");
  for (double e : {leg_effort, arm_effort, head_effort}) {
    if (!(e >= 0.0 && e <= 1.0)) bad("efforts must lie in [0, 1]");
  }
  for (double e : {halt_leg_left.extension, halt_leg_right.extension, halt_arm_left.extension,
                   halt_arm_right.extension}) {
    if (!(e >= 0.0 && e <= 1.0)) bad("halt extensions must lie in [0, 1]");
  }
}

GaitConfig gait_config_from_json(const json& j) {
  GaitConfig c;
  if (!j.is_object()) throw std::invalid_argument("gait config must be an object");
  try {
    c.frequency = opt(j, "frequency", c.frequency, "gait");
    if (j.contains("halt")) {
      const json& h = j["halt"];
      if (h.contains("leg_left")) c.halt_leg_left = leg_from_json(h["leg_left"], c.halt_leg_left, "gait.halt.leg_left");
      if (h.contains("leg_right")) {
        c.halt_leg_right = leg_from_json(h["leg_right"], c.halt_leg_right, "gait.halt.leg_right");
      }
      if (h.contains("arm_left")) c.halt_arm_left = arm_from_json(h["arm_left"], c.halt_arm_left, "gait.halt.arm_left");
      if (h.contains("arm_right")) {
        c.halt_arm_right = arm_from_json(h["arm_right"], c.halt_arm_right, "gait.halt.arm_right");
      }
    }
    c.lift = opt(j, "lift", c.lift, "gait");
    c.swing_x = opt(j, "swing_x", c.swing_x, "gait");
    c.swing_y = opt(j, "swing_y", c.swing_y, "gait");
    c.swing_turn = opt(j, "swing_turn", c.swing_turn, "gait");
    c.rocking = opt(j, "rocking", c.rocking, "gait");
    c.arm_swing = opt(j, "arm_swing", c.arm_swing, "gait");
    if (j.contains("gains")) {
      const json& g = j["gains"];
      c.gains.pitch_arm = opt(g, "pitch_arm", 0.0, "gait.gains");
      c.gains.pitch_foot = opt(g, "pitch_foot", 0.0, "gait.gains");
      c.gains.pitch_hip = opt(g, "pitch_hip", 0.0, "gait.gains");
      c.gains.roll_foot = opt(g, "roll_foot", 0.0, "gait.gains");
      c.gains.roll_hip = opt(g, "roll_hip", 0.0, "gait.gains");
    }
    c.feedback_cutoff = opt(j, "feedback_cutoff", c.feedback_cutoff, "gait");
    c.expected_pitch = opt(j, "expected_pitch", c.expected_pitch, "gait");
    c.expected_roll = opt(j, "expected_roll", c.expected_roll, "gait");
    c.foot_inverse_share = opt(j, "foot_inverse_share", c.foot_inverse_share, "gait");
    c.support_ramp = opt(j, "support_ramp", c.support_ramp, "gait");
    c.leg_effort = opt(j, "leg_effort", c.leg_effort, "gait");
    c.arm_effort = opt(j, "arm_effort", c.arm_effort, "gait");
    c.head_effort = opt(j, "head_effort", c.head_effort, "gait");
  } catch (const detail::SchemaViolation& e) {
    throw std::invalid_argument(e.what());
  }
  c.validate();
  return c;
}

json to_json(const GaitConfig& c) {
  return {{"frequency", c.frequency},
          {"halt",
           {{"leg_left", leg_json(c.halt_leg_left)},
            {"leg_right", leg_json(c.halt_leg_right)},
            {"arm_left", arm_json(c.halt_arm_left)},
            {"arm_right", arm_json(c.halt_arm_right)}}},
          {"lift", c.lift},
          {"swing_x", c.swing_x},
          {"swing_y", c.swing_y},
          {"swing_turn", c.swing_turn},
          {"rocking", c.rocking},
          {"arm_swing", c.arm_swing},
          {"gains",
           {{"pitch_arm", c.gains.pitch_arm},
            {"pitch_foot", c.gains.pitch_foot},
            {"pitch_hip", c.gains.pitch_hip},
            {"roll_foot", c.gains.roll_foot},
            {"roll_hip", c.gains.roll_hip}}},
          {"feedback_cutoff", c.feedback_cutoff},
          {"expected_pitch", c.expected_pitch},
          {"expected_roll", c.expected_roll},
          {"foot_inverse_share", c.foot_inverse_share},
          {"support_ramp", c.support_ramp},
          {"leg_effort", c.leg_effort},
          {"arm_effort", c.arm_effort},
          {"head_effort", c.head_effort}};
}

double step_phase(double mu, double f, double dt) {
  if (!(dt > 0.0 && dt <= 0.02)) throw std::invalid_argument("step_phase dt must lie in (0, 0.02] s");
  return wrap_angle(mu + kTwoPi * f * dt);
}

// Each leg runs the same left-side pattern at its own phase; the right leg
// sees the mirrored command and its result is mirrored back.
LimbPoses open_loop_waveform(double mu, const GaitCommand& cmd, const GaitConfig& cfg, double amplitude) {
  LimbPoses out{cfg.halt_leg_left, cfg.halt_leg_right, cfg.halt_arm_left, cfg.halt_arm_right};
  if (!cmd.walk) return out;
  const GaitCommand c = cmd.clamped();
  const GaitCommand m = c.mirrored();
  const double s = std::clamp(amplitude, 0.0, 1.0);
  const double mu_r = mu + kPi;
  out.leg_left = leg_wave(cfg.halt_leg_left, mu, c, cfg, s);
  out.leg_right = hop::mirrored(leg_wave(hop::mirrored(cfg.halt_leg_right), mu_r, m, cfg, s));
  out.arm_left = arm_wave(cfg.halt_arm_left, mu, c, cfg, s);
  out.arm_right = hop::mirrored(arm_wave(hop::mirrored(cfg.halt_arm_right), mu_r, m, cfg, s));
  return out;
}

FeedbackCorrections feedback_from_deviation(double dp, double dr, const GaitConfig& cfg) {
  const FeedbackGains& g = cfg.gains;
  const double share = cfg.foot_inverse_share;
  FeedbackCorrections c;
  c.arm_angle_y = g.pitch_arm * dp;
  c.leg_angle_y = g.pitch_hip * dp;
  c.leg_angle_x = g.roll_hip * dr;
  c.foot_angle_y = (1.0 - share) * g.pitch_foot * dp;
  c.foot_tilt_y = share * g.pitch_foot * dp;
  c.foot_angle_x = (1.0 - share) * g.roll_foot * dr;
  c.foot_tilt_x = share * g.roll_foot * dr;
  return c;
}

FeedbackCorrections feedback_corrections(const FusedAngles& est, const GaitConfig& cfg) {
  return feedback_from_deviation(est.pitch - cfg.expected_pitch, est.roll - cfg.expected_roll, cfg);
}

void DeviationFilter::update(const FusedAngles& est, const GaitConfig& cfg, double dt) {
  const double alpha = 1.0 - std::exp(-kTwoPi * cfg.feedback_cutoff * dt);
  pitch_ += alpha * ((est.pitch - cfg.expected_pitch) - pitch_);
  roll_ += alpha * ((est.roll - cfg.expected_roll) - roll_);
}

double leg_support(double leg_phase, double ramp_fraction) {
  double p = std::fmod(leg_phase, kTwoPi);
  if (p < 0.0) p += kTwoPi;
  if (p >= kPi) return 1.0;
  const double w = kTwoPi * ramp_fraction;
  return std::clamp(std::max(1.0 - p / w, (p - (kPi - w)) / w), 0.0, 1.0);
}

SupportCoefficients support_coefficients(double mu, double amplitude, const GaitConfig& cfg) {
  const double s = std::clamp(amplitude, 0.0, 1.0);
  return {1.0 - s * (1.0 - leg_support(mu, cfg.support_ramp)),
          1.0 - s * (1.0 - leg_support(mu + kPi, cfg.support_ramp))};
}

namespace {

struct LegSolve {
  LegJoints q;
  bool fallback = false;
};

LegSolve solve_leg(AbstractLegPose a, const FeedbackCorrections& corr, const RobotModel& model, Side side,
                   const VecX& previous) {
  a.angle_x += corr.leg_angle_x;
  a.angle_y += corr.leg_angle_y;
  a.foot_angle_x += corr.foot_angle_x;
  a.foot_angle_y += corr.foot_angle_y;
  a.extension = std::clamp(a.extension, 0.0, 1.0);
  LegSolve out;
  try {
    const LegJoints j = abstract_to_joint_leg(a, side, model.k_max());
    InverseLegPose inv = joint_to_inverse_leg(j, model, side);
    inv.foot_rotation = normalized(rot_y(corr.foot_tilt_y) * rot_x(corr.foot_tilt_x) * inv.foot_rotation);
    out.q = inverse_to_joint_leg(inv, model, side);
  } catch (const std::domain_error&) {
    out.q = leg_joints(previous, side);
    out.fallback = true;
  }
  return out;
}

VecX assemble(const LimbPoses& p, const FeedbackCorrections& corr, const RobotModel& model, const VecX& previous,
              bool& fallback) {
  VecX q = VecX::Zero(kNumJoints);
  for (Side side : {Side::left, Side::right}) {
    const LegSolve leg = solve_leg(side == Side::left ? p.leg_left : p.leg_right, corr, model, side, previous);
    fallback = fallback || leg.fallback;
    set_leg_joints(q, side, leg.q);
    AbstractArmPose arm = side == Side::left ? p.arm_left : p.arm_right;
    arm.angle_y += corr.arm_angle_y;
    arm.extension = std::clamp(arm.extension, 0.0, 1.0);
    set_arm_joints(q, side, abstract_to_joint_arm(arm, side, model.elbow_max()));
  }
  return q;
}

}  // namespace

VecX halt_joint_pose(const RobotModel& model, const GaitConfig& cfg) {
  bool fallback = false;
  const LimbPoses halt = open_loop_waveform(0.0, GaitCommand{}, cfg);
  VecX q = assemble(halt, FeedbackCorrections{}, model, VecX::Zero(kNumJoints), fallback);
  model.clamp_to_limits(q);
  return q;
}

GaitState initial_gait_state(const RobotModel& model, const GaitConfig& cfg) {
  GaitState s;
  s.last_command = halt_joint_pose(model, cfg);
  return s;
}

GaitOutput gait_step(const GaitState& state, const GaitCommand& cmd, const FusedAngles& est, const RobotModel& model,
                     const GaitConfig& cfg, double dt) {
  if (!(dt > 0.0 && dt <= 0.02)) throw std::invalid_argument("gait_step dt must lie in (0, 0.02] s");
  GaitOutput out;
  GaitState s = state;
  const GaitCommand c = cmd.clamped();
  const double ramp = cfg.frequency * dt;  // one cycle to full amplitude
  s.walking = c.walk;
  if (c.walk) {
    s.active = c;
    s.amplitude = std::min(1.0, s.amplitude + ramp);
  } else {
    s.amplitude = std::max(0.0, s.amplitude - ramp);
  }
  if (c.walk || s.amplitude > 0.0) {
    s.phase = step_phase(s.phase, cfg.frequency, dt);
    s.phase_total += kTwoPi * cfg.frequency * dt;
  }

  GaitCommand shape = s.active;
  shape.walk = s.amplitude > 0.0;
  out.abstract = open_loop_waveform(s.phase, shape, cfg, s.amplitude);

  s.deviation.update(est, cfg, dt);
  const FeedbackCorrections corr = feedback_from_deviation(s.deviation.pitch(), s.deviation.roll(), cfg);

  out.q = assemble(out.abstract, corr, model, state.last_command, out.ik_fallback);
  out.clamped = model.clamp_to_limits(out.q);
  s.last_command = out.q;

  out.effort.e = VecX::Constant(kNumJoints, cfg.leg_effort);
  out.effort.e[kHeadYaw] = out.effort.e[kHeadPitch] = cfg.head_effort;
  for (Side side : {Side::left, Side::right}) {
    for (int k = 0; k < 3; ++k) out.effort.e[arm_base(side) + k] = cfg.arm_effort;
  }
  out.effort.clamp();
  out.support = support_coefficients(s.phase, s.amplitude, cfg);
  out.state = s;
  return out;
}

}  // namespace hop
