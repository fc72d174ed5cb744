#include "hop/gait.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace hop;
constexpr double kPi = std::numbers::pi;

namespace {

void check_leg_near(const AbstractLegPose& a, const AbstractLegPose& b, double tol) {
  CHECK(std::abs(a.extension - b.extension) < tol);
  CHECK(std::abs(a.angle_x - b.angle_x) < tol);
  CHECK(std::abs(a.angle_y - b.angle_y) < tol);
  CHECK(std::abs(a.angle_z - b.angle_z) < tol);
  CHECK(std::abs(a.foot_angle_x - b.foot_angle_x) < tol);
  CHECK(std::abs(a.foot_angle_y - b.foot_angle_y) < tol);
}

void check_arm_near(const AbstractArmPose& a, const AbstractArmPose& b, double tol) {
  CHECK(std::abs(a.extension - b.extension) < tol);
  CHECK(std::abs(a.angle_x - b.angle_x) < tol);
  CHECK(std::abs(a.angle_y - b.angle_y) < tol);
}

GaitState walking_state(double mu, const GaitCommand& c, const RobotModel& model, const GaitConfig& cfg) {
  GaitState s = initial_gait_state(model, cfg);
  s.phase = mu;
  s.amplitude = 1.0;
  s.walking = true;
  s.active = c;
  return s;
}

GaitCommand random_command(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {u(rng), u(rng), u(rng), true};
}

}  // namespace

TEST_CASE("step_phase") {
  CHECK(step_phase(0.0, 0.0, 0.01) == 0.0);
  CHECK(step_phase(0.0, 2.4, 0.01) == doctest::Approx(0.150796).epsilon(1e-6));
  CHECK(step_phase(0.0, 2.4, 0.01) == doctest::Approx(2.0 * kPi * 2.4 * 0.01).epsilon(1e-15));
  const double crossed = step_phase(3.1, 2.4, 0.01);
  CHECK(crossed > -kPi);
  CHECK(crossed <= kPi);
  CHECK(crossed == doctest::Approx(3.1 + 2.0 * kPi * 0.024 - 2.0 * kPi));
  CHECK_THROWS_AS(step_phase(0.0, 2.4, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(step_phase(0.0, 2.4, 0.021), std::invalid_argument);
}

TEST_CASE("command clamping and mirroring") {
  const GaitCommand c{2.0, -3.0, 0.5, true};
  const GaitCommand k = c.clamped();
  CHECK(k.vx == 1.0);
  CHECK(k.vy == -1.0);
  CHECK(k.omega == 0.5);
  CHECK(k.walk);
  const GaitCommand m = k.mirrored();
  CHECK(m.vx == 1.0);
  CHECK(m.vy == 1.0);
  CHECK(m.omega == -0.5);
  CHECK(m.mirrored() == k);
}

TEST_CASE("config validation and JSON round trip") {
  GaitConfig c;
  CHECK_NOTHROW(c.validate());
  c.frequency = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.swing_x = -0.1;
  CHECK_THROWS(c.validate());

  c = {};
  c.frequency = 1.9;
  c.gains.roll_hip = 0.3;
  c.halt_leg_left.angle_y = -0.02;
  const GaitConfig back = gait_config_from_json(to_json(c));
  CHECK(back.frequency == 1.9);
  CHECK(back.gains.roll_hip == 0.3);
  CHECK(back.halt_leg_left == c.halt_leg_left);
  CHECK(back.halt_arm_right == c.halt_arm_right);

  CHECK(gait_config_from_json(nlohmann::json::object()).frequency == 2.4);
  CHECK_THROWS_AS(gait_config_from_json({{"frequency", -1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(gait_config_from_json({{"lift", "high"}}), std::invalid_argument);
}

TEST_CASE("default swing stays within 0.4 rad at full command") {
  const GaitConfig cfg;
  double worst = 0.0;
  for (int i = 0; i < 720; ++i) {
    const double mu = -kPi + i * kPi / 360.0;
    const LimbPoses p = open_loop_waveform(mu, {1.0, 1.0, 1.0, true}, cfg);
    for (const AbstractLegPose* l : {&p.leg_left, &p.leg_right}) {
      worst = std::max({worst, std::abs(l->angle_y), std::abs(l->angle_x), std::abs(l->angle_z)});
    }
  }
  CHECK(worst <= 0.4);
}

TEST_CASE("walk=false yields the halt pose exactly") {
  const GaitConfig cfg;
  for (double mu : {-3.0, -1.0, 0.0, 0.7, 3.1}) {
    const LimbPoses p = open_loop_waveform(mu, {0.8, -0.3, 0.4, false}, cfg);
    CHECK(p.leg_left == cfg.halt_leg_left);
    CHECK(p.leg_right == cfg.halt_leg_right);
    CHECK(p.arm_left == cfg.halt_arm_left);
    CHECK(p.arm_right == cfg.halt_arm_right);
  }
}

TEST_CASE("marching in place is left/right symmetric") {
  const GaitConfig cfg;
  const GaitCommand c{0.0, 0.0, 0.0, true};
  for (int i = 0; i < 1000; ++i) {
    const double mu = -kPi + 2.0 * kPi * i / 1000.0;
    const LimbPoses a = open_loop_waveform(mu, c, cfg);
    const LimbPoses b = open_loop_waveform(wrap_angle(mu + kPi), c, cfg);
    check_leg_near(a.leg_left, mirrored(b.leg_right), 1e-9);
    check_arm_near(a.arm_left, mirrored(b.arm_right), 1e-9);
  }
}

TEST_CASE("forward swing peak-to-peak") {
  const GaitConfig cfg;
  const GaitCommand c{0.5, 0.0, 0.0, true};
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < 3600; ++i) {
    const double mu = -kPi + 2.0 * kPi * i / 3600.0;
    const double y = open_loop_waveform(mu, c, cfg).leg_left.angle_y;
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  CHECK(hi - lo == doctest::Approx(2.0 * cfg.swing_x * 0.5).epsilon(1e-9));
}

TEST_CASE("waveform components") {
  const GaitConfig cfg;
  // Lift pulse only during the own leg's swing half.
  const LimbPoses up = open_loop_waveform(kPi / 2.0, {}, GaitConfig{}, 1.0);
  CHECK(up.leg_left == cfg.halt_leg_left);  // walk=false
  const LimbPoses p = open_loop_waveform(kPi / 2.0, {0, 0, 0, true}, cfg);
  CHECK(p.leg_left.extension == doctest::Approx(cfg.halt_leg_left.extension + cfg.lift));
  CHECK(p.leg_right.extension == doctest::Approx(cfg.halt_leg_right.extension));
  // Arms swing against the ipsilateral leg.
  const LimbPoses f = open_loop_waveform(0.0, {1, 0, 0, true}, cfg);
  CHECK(f.leg_left.angle_y > cfg.halt_leg_left.angle_y);
  CHECK(f.arm_left.angle_y < cfg.halt_arm_left.angle_y);
  CHECK(f.leg_right.angle_y < cfg.halt_leg_right.angle_y);
  CHECK(f.arm_right.angle_y > cfg.halt_arm_right.angle_y);
  // Half amplitude halves every deviation from halt.
  const LimbPoses h = open_loop_waveform(0.4, {1, 0.5, -0.5, true}, cfg, 0.5);
  const LimbPoses w = open_loop_waveform(0.4, {1, 0.5, -0.5, true}, cfg, 1.0);
  CHECK(h.leg_left.angle_z - cfg.halt_leg_left.angle_z ==
        doctest::Approx(0.5 * (w.leg_left.angle_z - cfg.halt_leg_left.angle_z)));
}

TEST_CASE("feedback corrections") {
  GaitConfig cfg;
  cfg.gains = {0.3, 0.4, 0.5, 0.6, 0.7};
  cfg.expected_pitch = 0.05;
  cfg.expected_roll = -0.02;
  FusedAngles est;
  est.pitch = cfg.expected_pitch;
  est.roll = cfg.expected_roll;
  CHECK(feedback_corrections(est, cfg) == FeedbackCorrections{});

  GaitConfig arm_only;
  arm_only.gains.pitch_arm = 0.8;
  const FeedbackCorrections a = feedback_from_deviation(0.1, 0.0, arm_only);
  CHECK(a.arm_angle_y == doctest::Approx(0.08));
  CHECK(a.leg_angle_x == 0.0);
  CHECK(a.leg_angle_y == 0.0);
  CHECK(a.foot_angle_x == 0.0);
  CHECK(a.foot_angle_y == 0.0);
  CHECK(a.foot_tilt_x == 0.0);
  CHECK(a.foot_tilt_y == 0.0);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 1000; ++i) {
    const double dp = u(rng), dr = u(rng);
    const FeedbackCorrections p = feedback_from_deviation(dp, dr, cfg);
    const FeedbackCorrections n = feedback_from_deviation(-dp, -dr, cfg);
    CHECK(n.arm_angle_y == -p.arm_angle_y);
    CHECK(n.leg_angle_x == -p.leg_angle_x);
    CHECK(n.leg_angle_y == -p.leg_angle_y);
    CHECK(n.foot_angle_x == -p.foot_angle_x);
    CHECK(n.foot_angle_y == -p.foot_angle_y);
    CHECK(n.foot_tilt_x == -p.foot_tilt_x);
    CHECK(n.foot_tilt_y == -p.foot_tilt_y);
    // Linear in each channel: superposition of the pitch-only and roll-only parts.
    const FeedbackCorrections sp = feedback_from_deviation(dp, 0.0, cfg);
    const FeedbackCorrections sr = feedback_from_deviation(0.0, dr, cfg);
    const FeedbackCorrections d2 = feedback_from_deviation(2.0 * dp, 2.0 * dr, cfg);
    CHECK(std::abs(sp.leg_angle_y + sr.leg_angle_y - p.leg_angle_y) < 1e-15);
    CHECK(std::abs(sp.foot_angle_x + sr.foot_angle_x - p.foot_angle_x) < 1e-15);
    CHECK(std::abs(d2.foot_tilt_y - 2.0 * p.foot_tilt_y) < 1e-15);
    CHECK(std::abs(d2.leg_angle_x - 2.0 * p.leg_angle_x) < 1e-15);
  }
}

TEST_CASE("foot channel split between abstract and inverse space") {
  GaitConfig cfg;
  cfg.gains.pitch_foot = 1.0;
  cfg.foot_inverse_share = 0.25;
  const FeedbackCorrections c = feedback_from_deviation(0.2, 0.0, cfg);
  CHECK(c.foot_angle_y == doctest::Approx(0.15));
  CHECK(c.foot_tilt_y == doctest::Approx(0.05));
}

TEST_CASE("deviation filter is a first-order low-pass") {
  GaitConfig cfg;
  DeviationFilter f;
  FusedAngles est;
  est.pitch = 0.1;
  const double dt = 0.01;
  const double alpha = 1.0 - std::exp(-2.0 * kPi * cfg.feedback_cutoff * dt);
  f.update(est, cfg, dt);
  CHECK(f.pitch() == doctest::Approx(alpha * 0.1));
  for (int i = 0; i < 200; ++i) f.update(est, cfg, dt);
  CHECK(f.pitch() == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(f.roll() == 0.0);
  // Step response after n ticks: 1 - (1 - alpha)^n.
  DeviationFilter g;
  for (int i = 0; i < 10; ++i) g.update(est, cfg, dt);
  CHECK(g.pitch() == doctest::Approx(0.1 * (1.0 - std::pow(1.0 - alpha, 10))));
  g.reset();
  CHECK(g.pitch() == 0.0);
}

TEST_CASE("support coefficients") {
  const GaitConfig cfg;
  CHECK(leg_support(-1.0, 0.1) == 1.0);  // stance half
  CHECK(leg_support(0.0, 0.1) == 1.0);
  CHECK(leg_support(kPi / 2.0, 0.1) == 0.0);
  CHECK(leg_support(0.1 * kPi, 0.1) == doctest::Approx(0.5));
  const SupportCoefficients halt = support_coefficients(1.0, 0.0, cfg);
  CHECK(halt.left == 1.0);
  CHECK(halt.right == 1.0);
  for (int i = 0; i < 3600; ++i) {
    const double mu = -kPi + 2.0 * kPi * i / 3600.0;
    const SupportCoefficients s = support_coefficients(mu, 1.0, cfg);
    CHECK(s.left >= 0.0);
    CHECK(s.left <= 1.0);
    CHECK(s.left + s.right >= 1.0 - cfg.support_ramp);
    const SupportCoefficients t = support_coefficients(mu + kPi, 1.0, cfg);
    CHECK(std::abs(t.left - s.right) < 1e-12);
    CHECK(std::abs(t.right - s.left) < 1e-12);
  }
}

TEST_CASE("halted gait holds the halt pose image") {
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  const VecX halt = halt_joint_pose(model, cfg);
  // Halt image under the abstract -> joint conversion.
  VecX expect = VecX::Zero(kNumJoints);
  for (Side side : {Side::left, Side::right}) {
    set_leg_joints(expect, side,
                   abstract_to_joint_leg(side == Side::left ? cfg.halt_leg_left : cfg.halt_leg_right, side,
                                         model.k_max()));
    set_arm_joints(expect, side,
                   abstract_to_joint_arm(side == Side::left ? cfg.halt_arm_left : cfg.halt_arm_right, side,
                                         model.elbow_max()));
  }
  CHECK((halt - expect).cwiseAbs().maxCoeff() < 1e-9);

  GaitState s = initial_gait_state(model, cfg);
  for (int i = 0; i < 200; ++i) {
    const GaitOutput o = gait_step(s, {0.5, 0.2, 0.1, false}, FusedAngles{}, model, cfg, 0.01);
    CHECK(o.q == halt);
    CHECK(o.state.phase == 0.0);
    CHECK(o.support.left == 1.0);
    CHECK(o.support.right == 1.0);
    CHECK_FALSE(o.clamped);
    s = o.state;
  }
}

TEST_CASE("efforts per limb") {
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  const GaitOutput o = gait_step(initial_gait_state(model, cfg), {}, FusedAngles{}, model, cfg, 0.01);
  CHECK(o.effort.e[kHeadYaw] == cfg.head_effort);
  CHECK(o.effort.e[kLeftShoulderRoll] == cfg.arm_effort);
  CHECK(o.effort.e[kRightElbowPitch] == cfg.arm_effort);
  CHECK(o.effort.e[kLeftKneePitch] == cfg.leg_effort);
  CHECK(o.effort.e[kRightAnkleRoll] == cfg.leg_effort);
}

TEST_CASE("walking run: phase advance and periodicity") {
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  GaitState s = initial_gait_state(model, cfg);
  std::vector<VecX> q;
  std::vector<SupportCoefficients> sup;
  for (int i = 0; i < 1000; ++i) {
    const GaitOutput o = gait_step(s, {0.3, 0.0, 0.0, true}, FusedAngles{}, model, cfg, 0.01);
    CHECK_FALSE(o.ik_fallback);
    q.push_back(o.q);
    sup.push_back(o.support);
    s = o.state;
  }
  CHECK(s.phase_total == doctest::Approx(2.0 * kPi * cfg.frequency * 10.0).epsilon(1e-12));
  // 500 ticks = 12 whole periods at 2.4 Hz; the start ramp lasts one period.
  double worst = 0.0;
  for (int k = 100; k + 500 < 1000; ++k) {
    worst = std::max(worst, (q[k] - q[k + 500]).cwiseAbs().maxCoeff());
    CHECK(std::abs(sup[k].left - sup[k + 500].left) < 1e-9);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("stopping ramps down over one cycle then freezes the phase") {
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  GaitState s = initial_gait_state(model, cfg);
  for (int i = 0; i < 100; ++i) s = gait_step(s, {0.6, 0, 0, true}, FusedAngles{}, model, cfg, 0.01).state;
  CHECK(s.amplitude == 1.0);
  int ticks = 0;
  while (s.amplitude > 0.0) {
    s = gait_step(s, {}, FusedAngles{}, model, cfg, 0.01).state;
    ++ticks;
    CHECK(s.active.vx == 0.6);
  }
  CHECK(ticks == static_cast<int>(std::ceil(1.0 / (cfg.frequency * 0.01))));
  const double frozen = s.phase;
  const GaitOutput o = gait_step(s, {}, FusedAngles{}, model, cfg, 0.01);
  CHECK(o.state.phase == frozen);
  CHECK(o.q == halt_joint_pose(model, cfg));
}

TEST_CASE("pure CPG determinism") {
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int i = 0; i < 100; ++i) {
    const GaitCommand c = random_command(rng);
    const double mu = u(rng);
    const GaitOutput a = gait_step(walking_state(mu, c, model, cfg), c, FusedAngles{}, model, cfg, 0.01);
    GaitState other = walking_state(mu, c, model, cfg);
    other.phase_total = 42.0;
    other.last_command = VecX::Constant(kNumJoints, 0.1);
    const GaitOutput b = gait_step(other, c, FusedAngles{}, model, cfg, 0.01);
    CHECK(a.q == b.q);
    CHECK(a.support == b.support);
  }
}

TEST_CASE("mirrored command mirrors the joint pose") {
  const RobotModel& model = fixtures::default_model();
  GaitConfig cfg;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const GaitCommand c = random_command(rng);
    const double mu = u(rng);
    const GaitOutput a = gait_step(walking_state(mu, c, model, cfg), c, FusedAngles{}, model, cfg, 0.01);
    const GaitOutput b = gait_step(walking_state(wrap_angle(mu + kPi), c.mirrored(), model, cfg), c.mirrored(),
                                   FusedAngles{}, model, cfg, 0.01);
    worst = std::max(worst, (mirror_joints(a.q) - b.q).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("mirrored attitude mirrors the feedback response") {
  const RobotModel& model = fixtures::default_model();
  GaitConfig cfg;
  cfg.gains = {0.3, 0.4, 0.5, 0.6, 0.7};
  GaitState s = initial_gait_state(model, cfg);
  FusedAngles est;
  est.pitch = 0.05;
  est.roll = 0.04;
  FusedAngles mir = est;
  mir.roll = -est.roll;
  GaitState m = s;
  for (int i = 0; i < 50; ++i) {
    const GaitOutput a = gait_step(s, {}, est, model, cfg, 0.01);
    const GaitOutput b = gait_step(m, {}, mir, model, cfg, 0.01);
    CHECK((mirror_joints(a.q) - b.q).cwiseAbs().maxCoeff() < 1e-9);
    s = a.state;
    m = b.state;
  }
  // Nonzero deviation moves the pose away from halt.
  CHECK((s.last_command - halt_joint_pose(model, cfg)).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("joint limits hold over random command sweeps") {
  const RobotModel& model = fixtures::default_model();
  GaitConfig cfg;
  cfg.gains = {0.5, 0.5, 0.5, 0.5, 0.5};
  const VecX lo = model.lower_limits(), hi = model.upper_limits();
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> att(-0.4, 0.4);
  GaitState s = initial_gait_state(model, cfg);
  GaitCommand c = random_command(rng);
  for (int i = 0; i < 5000; ++i) {
    if (i % 100 == 0) c = random_command(rng);
    if (i % 700 == 0) c.walk = false;
    FusedAngles est;
    est.pitch = att(rng);
    est.roll = att(rng);
    const GaitOutput o = gait_step(s, c, est, model, cfg, 0.01);
    REQUIRE(o.q.allFinite());
    for (int j = 0; j < kNumJoints; ++j) {
      CHECK(o.q[j] >= lo[j]);
      CHECK(o.q[j] <= hi[j]);
    }
    CHECK(o.support.left >= 0.0);
    CHECK(o.support.right <= 1.0);
    s = o.state;
  }
}

TEST_CASE("extreme halt pose is clamped and reported") {
  const RobotModel& model = fixtures::default_model();
  GaitConfig cfg;
  cfg.halt_arm_left.angle_x = 3.0;
  const GaitOutput o = gait_step(initial_gait_state(model, cfg), {}, FusedAngles{}, model, cfg, 0.01);
  CHECK(o.clamped);
  CHECK(o.q[kLeftShoulderRoll] <= model.upper_limits()[kLeftShoulderRoll]);
}

TEST_CASE("unreachable leg pose falls back to the previous command") {
  const RobotModel& model = fixtures::default_model();
  GaitConfig cfg;
  // Fully stretched leg: tilting the sole about its own centre pushes the ankle out of reach.
  cfg.halt_leg_left.extension = 0.0;
  cfg.gains.pitch_foot = 1.0;
  cfg.foot_inverse_share = 1.0;
  cfg.feedback_cutoff = 1e6;
  GaitState s = initial_gait_state(model, cfg);
  const VecX previous = halt_joint_pose(model, GaitConfig{});
  s.last_command = previous;
  FusedAngles est;
  est.pitch = 0.1;
  const GaitOutput o = gait_step(s, {}, est, model, cfg, 0.01);
  CHECK(o.ik_fallback);
  CHECK(leg_joints(o.q, Side::left) == leg_joints(previous, Side::left));
  CHECK(leg_joints(o.q, Side::right) != leg_joints(previous, Side::right));

  const GaitOutput fine = gait_step(s, {}, est, model, GaitConfig{}, 0.01);
  CHECK_FALSE(fine.ik_fallback);
}

TEST_CASE("invalid dt is rejected") {
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  CHECK_THROWS_AS(gait_step(initial_gait_state(model, cfg), {}, FusedAngles{}, model, cfg, 0.05),
                  std::invalid_argument);
}
