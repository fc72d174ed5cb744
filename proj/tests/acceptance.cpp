// Acceptance gate: one PASS/FAIL line per primary criterion.
#include "fixtures.hpp"
#include "hop/bus.hpp"
#include "hop/camera.hpp"
#include "hop/dynamics.hpp"
#include "hop/gait.hpp"
#include "hop/motion.hpp"
#include "hop/orientation.hpp"
#include "hop/runtime.hpp"
#include "hop/state_estimation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

using namespace hop;
constexpr double kPi = std::numbers::pi;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [FAILED]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return normalized(Quat(n(rng), n(rng), n(rng), n(rng)));
}

// ---------------------------------------------------------------------------

Outcome fused_angles() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  double worst_rt = 0.0, worst_shift = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const Quat q = random_quat(rng);
    const FusedAngles f = fused_from_quat(q);
    worst_rt = std::max(worst_rt, Eigen::AngleAxisd(q.conjugate() * quat_from_fused(f)).angle());
    const double a = u(rng);
    const FusedAngles g = fused_from_quat(Quat(Eigen::AngleAxisd(a, Vec3::UnitZ())) * q);
    worst_shift = std::max({worst_shift, std::abs(wrap_angle(g.yaw - f.yaw - a)), std::abs(g.pitch - f.pitch),
                            std::abs(g.roll - f.roll)});
    if (g.hemisphere != f.hemisphere) worst_shift = 1.0;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(worst_rt < 1e-9, "round trip max " + fmt("%.2e", worst_rt) + " rad < 1e-9");
  o.require(worst_shift < 1e-9, "yaw shift max " + fmt("%.2e", worst_shift) + " < 1e-9");
  o.require(secs < 5.0, "runtime " + fmt("%.2f", secs) + " s < 5");
  return o;
}

Outcome complementary_filter() {
  Outcome o;
  const FilterConfig cfg;
  const double dt = 0.01;
  const int steps = static_cast<int>(std::ceil(3.0 / cfg.kp / dt));
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> dir(-kPi, kPi);
  double worst = 0.0;
  for (int k = 1; k <= 24; ++k) {
    const double tilt = (kPi / 3.0) * k / 24.0;
    const double d = dir(rng);
    const Quat start = Quat(Eigen::AngleAxisd(tilt, Vec3(std::cos(d), std::sin(d), 0.0)));
    FilterState s = make_filter(cfg, start);
    ImuSample m;
    m.accel = Vec3(0, 0, kGravity);
    m.dt = dt;
    for (int i = 0; i < steps; ++i) s = filter_update(s, m);
    const Vec3 z = s.attitude * Vec3::UnitZ();
    worst = std::max(worst, std::acos(std::clamp(z.z(), -1.0, 1.0)));
  }
  o.require(worst < 0.01, "tilt error after 3/kp = " + fmt("%.3f", 3.0 / cfg.kp) + " s from <= 60 deg: " +
                              fmt("%.4f", worst) + " rad < 0.01");

  FilterConfig gyro_only = cfg;
  gyro_only.accel_trust_low = 100.0;
  gyro_only.accel_trust_high = 101.0;
  FilterState s = make_filter(gyro_only);
  ImuSample m;
  m.gyro = Vec3(0.1, -0.05, 1.3);
  m.accel = Vec3(0, 0, kGravity);
  m.dt = 0.001;
  for (int i = 0; i < 1000; ++i) s = filter_update(s, m);
  const Quat analytic(Eigen::AngleAxisd(m.gyro.norm() * 1.0, m.gyro.normalized()));
  const double yaw_err = std::abs(wrap_angle(fused_from_quat(s.attitude).yaw - fused_from_quat(analytic).yaw));
  o.require(yaw_err < 1e-3, "gyro-only yaw over 1 s err " + fmt("%.2e", yaw_err) + " rad < 1e-3");

  FilterConfig mag = cfg;
  mag.use_mag = true;
  FilterState b = make_filter(mag);
  const Vec3 bias(0.02, -0.015, 0.03);
  ImuSample mb;
  mb.gyro = bias;
  mb.accel = Vec3(0, 0, kGravity);
  mb.mag = Vec3(0.4, 0, -0.9).normalized();
  mb.dt = 0.01;
  for (int i = 0; i < 20000; ++i) b = filter_update(b, mb);
  double rel = 0.0;
  for (int k = 0; k < 3; ++k) rel = std::max(rel, std::abs(b.gyro_bias[k] - bias[k]) / std::abs(bias[k]));
  o.require(rel < 0.05, "bias recovery worst axis " + fmt("%.2f", 100.0 * rel) + "% < 5%");
  return o;
}

// Random leg configuration inside the limits and the analytic IK domain.
LegJoints random_leg(std::mt19937_64& rng, const RobotModel& m, Side side) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double L1 = m.leg(side).thigh, L2 = m.leg(side).shank;
  while (true) {
    LegJoints q;
    for (int i = 0; i < 6; ++i) {
      const Joint& j = m.joints()[leg_base(side) + i];
      q[i] = j.lower + (j.upper - j.lower) * u(rng);
    }
    if (q[3] < 0.01 || q[3] > m.joints()[leg_base(side) + 3].upper - 0.01) continue;
    const double lean = std::atan2(-L1 * std::sin(q[3]), L1 * std::cos(q[3]) + L2) - q[4];
    if (std::abs(lean) > kPi / 2 - 0.05) continue;
    return q;
  }
}

double max_diff(const LegJoints& a, const LegJoints& b) {
  double d = 0.0;
  for (int i = 0; i < 6; ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

Outcome kinematics() {
  Outcome o;
  const RobotModel& m = fixtures::default_model();
  const double kmax = m.k_max(), emax = m.elbow_max();
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> u(-1.0, 1.0), e(0.0, 1.0);
  double abs_leg = 0.0, abs_arm = 0.0, inv = 0.0, fk_p = 0.0, fk_r = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Side side = i % 2 ? Side::left : Side::right;
    const AbstractLegPose a{e(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    const AbstractLegPose b = joint_to_abstract_leg(abstract_to_joint_leg(a, side, kmax), side, kmax);
    abs_leg = std::max({abs_leg, std::abs(a.extension - b.extension), std::abs(a.angle_x - b.angle_x),
                        std::abs(a.angle_y - b.angle_y), std::abs(a.angle_z - b.angle_z),
                        std::abs(a.foot_angle_x - b.foot_angle_x), std::abs(a.foot_angle_y - b.foot_angle_y)});
    const LegJoints q{u(rng), u(rng), u(rng), kmax * e(rng), u(rng), u(rng)};
    abs_leg = std::max(abs_leg, max_diff(q, abstract_to_joint_leg(joint_to_abstract_leg(q, side, kmax), side, kmax)));

    const AbstractArmPose aa{e(rng), u(rng), u(rng)};
    const AbstractArmPose ab = joint_to_abstract_arm(abstract_to_joint_arm(aa, side, emax), side, emax);
    abs_arm = std::max({abs_arm, std::abs(aa.extension - ab.extension), std::abs(aa.angle_x - ab.angle_x),
                        std::abs(aa.angle_y - ab.angle_y)});

    const LegJoints ql = random_leg(rng, m, side);
    const InverseLegPose p = joint_to_inverse_leg(ql, m, side);
    const LegJoints back = inverse_to_joint_leg(p, m, side);
    inv = std::max(inv, max_diff(ql, back));
    VecX full = VecX::Zero(kNumJoints);
    set_leg_joints(full, side, back);
    const Pose sole = forward_kinematics(m, full).at(side == Side::left ? "left_sole" : "right_sole");
    fk_p = std::max(fk_p, (sole.position - p.foot_position).norm());
    fk_r = std::max(fk_r, Eigen::AngleAxisd(sole.rotation.conjugate() * p.foot_rotation).angle());
  }
  o.require(abs_leg < 1e-9, "abstract<->joint leg " + fmt("%.2e", abs_leg));
  o.require(abs_arm < 1e-9, "abstract<->joint arm " + fmt("%.2e", abs_arm));
  o.require(inv < 1e-9, "inverse<->joint " + fmt("%.2e", inv));
  o.require(fk_p < 1e-9 && fk_r < 1e-9, "FK(IK) position " + fmt("%.2e", fk_p) + " m rotation " + fmt("%.2e", fk_r));
  return o;
}

Outcome inverse_dynamics_fixtures() {
  Outcome o;
  const Vec3 g(0, 0, -9.81);
  const double mass = 1.0, len = 0.5;
  const RobotModel p = fixtures::pendulum(mass, len);
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> ang(-kPi, kPi), vel(-5, 5), acc(-20, 20);
  double worst_p = 0.0;
  for (int i = 0; i < 1000; ++i) {
    VecX q(1);
    q[0] = ang(rng);
    worst_p = std::max(worst_p, std::abs(inverse_dynamics(p, static_point(q), g, {})[0] -
                                         mass * 9.81 * len * std::sin(q[0])));
  }
  o.require(worst_p < 1e-10, "pendulum max err " + fmt("%.2e", worst_p) + " N m < 1e-10");

  const fixtures::DoublePendulum dp;
  const RobotModel m = fixtures::double_pendulum(dp);
  double worst_d = 0.0;
  for (int i = 0; i < 1000; ++i) {
    JointTrajPoint pt{VecX(2), VecX(2), VecX(2)};
    pt.q << ang(rng), ang(rng);
    pt.qd << vel(rng), vel(rng);
    pt.qdd << acc(rng), acc(rng);
    const double q2 = pt.q[1], c = std::cos(q2), s = std::sin(q2);
    const double M11 =
        dp.I1 + dp.I2 + dp.m1 * dp.c1 * dp.c1 + dp.m2 * (dp.l1 * dp.l1 + dp.c2 * dp.c2 + 2 * dp.l1 * dp.c2 * c);
    const double M12 = dp.I2 + dp.m2 * (dp.c2 * dp.c2 + dp.l1 * dp.c2 * c);
    const double M22 = dp.I2 + dp.m2 * dp.c2 * dp.c2;
    const double h = dp.m2 * dp.l1 * dp.c2 * s;
    const double G1 = 9.81 * (dp.m1 * dp.c1 + dp.m2 * dp.l1) * std::sin(pt.q[0]) +
                      dp.m2 * 9.81 * dp.c2 * std::sin(pt.q[0] + q2);
    const double G2 = dp.m2 * 9.81 * dp.c2 * std::sin(pt.q[0] + q2);
    const double d1 = pt.qd[0], d2 = pt.qd[1];
    const double t1 = M11 * pt.qdd[0] + M12 * pt.qdd[1] - h * (2 * d1 * d2 + d2 * d2) + G1;
    const double t2 = M12 * pt.qdd[0] + M22 * pt.qdd[1] + h * d1 * d1 + G2;
    const VecX tau = inverse_dynamics(m, pt, g, {});
    worst_d = std::max({worst_d, std::abs(tau[0] - t1), std::abs(tau[1] - t2)});
  }
  o.require(worst_d < 1e-8, "double pendulum max err " + fmt("%.2e", worst_d) + " N m < 1e-8");
  return o;
}

double leg_diff(const AbstractLegPose& a, const AbstractLegPose& b) {
  return std::max({std::abs(a.extension - b.extension), std::abs(a.angle_x - b.angle_x),
                   std::abs(a.angle_y - b.angle_y), std::abs(a.angle_z - b.angle_z),
                   std::abs(a.foot_angle_x - b.foot_angle_x), std::abs(a.foot_angle_y - b.foot_angle_y)});
}

double arm_diff(const AbstractArmPose& a, const AbstractArmPose& b) {
  return std::max({std::abs(a.extension - b.extension), std::abs(a.angle_x - b.angle_x),
                   std::abs(a.angle_y - b.angle_y)});
}

Outcome gait() {
  Outcome o;
  const RobotModel& model = fixtures::default_model();
  const GaitConfig cfg;
  const GaitCommand zero{0.0, 0.0, 0.0, true};
  double sym = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double mu = -kPi + 2.0 * kPi * i / 1000.0;
    const LimbPoses a = open_loop_waveform(mu, zero, cfg);
    const LimbPoses b = open_loop_waveform(wrap_angle(mu + kPi), zero, cfg);
    sym = std::max({sym, leg_diff(a.leg_left, mirrored(b.leg_right)), leg_diff(a.leg_right, mirrored(b.leg_left)),
                    arm_diff(a.arm_left, mirrored(b.arm_right)), arm_diff(a.arm_right, mirrored(b.arm_left))});
  }
  o.require(sym < 1e-9, "zero-command mirror symmetry " + fmt("%.2e", sym));

  // 2.4 Hz at 100 Hz: 5 periods span exactly 208.33 ticks, 12 periods 500.
  GaitState s = initial_gait_state(model, cfg);
  std::vector<VecX> q;
  for (int i = 0; i < 1200; ++i) {
    const GaitOutput g = gait_step(s, {0.3, 0.1, -0.2, true}, FusedAngles{}, model, cfg, 0.01);
    q.push_back(g.q);
    s = g.state;
  }
  const int period_ticks = static_cast<int>(std::lround(12.0 / cfg.frequency / 0.01));
  double per = 0.0;
  for (int k = 200; k + period_ticks < 1200; ++k) per = std::max(per, (q[k] - q[k + period_ticks]).cwiseAbs().maxCoeff());
  o.require(period_ticks == 500 && per < 1e-9, "periodicity over 12/f = " + std::to_string(period_ticks) +
                                                   " ticks " + fmt("%.2e", per));

  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> g(0.0, 1.0), e(-0.2, 0.2);
  double corr = 0.0;
  for (int i = 0; i < 1000; ++i) {
    GaitConfig c;
    c.gains = {g(rng), g(rng), g(rng), g(rng), g(rng)};
    c.expected_pitch = e(rng);
    c.expected_roll = e(rng);
    FusedAngles est;
    est.pitch = c.expected_pitch;
    est.roll = c.expected_roll;
    est.yaw = kPi * e(rng);
    const FeedbackCorrections f = feedback_corrections(est, c);
    corr = std::max({corr, std::abs(f.arm_angle_y), std::abs(f.leg_angle_x), std::abs(f.leg_angle_y),
                     std::abs(f.foot_angle_x), std::abs(f.foot_angle_y), std::abs(f.foot_tilt_x),
                     std::abs(f.foot_tilt_y)});
  }
  o.require(corr == 0.0, "corrections at expected attitude max " + fmt("%.1e", corr) + " (exactly 0)");
  return o;
}

Outcome motion_player() {
  Outcome o;
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.0, 1.0), gap(0.2, 1.0);
  Motion m;
  m.name = "random";
  double t = 0.0;
  for (int i = 0; i < 6; ++i) {
    Keyframe k;
    k.t = t;
    for (int j = 0; j < kNumJoints; ++j) {
      k.pos[j] = u(rng);
      k.vel[j] = u(rng);
      k.effort.e[j] = w(rng);
    }
    k.support = {w(rng), 1.0 - 0.5 * w(rng)};
    m.keyframes.push_back(k);
    t += gap(rng);
  }
  bool exact = true;
  for (const Keyframe& k : m.keyframes) {
    const FrameCommand f = sample(m, k.t);
    exact = exact && f.pos == k.pos && f.vel == k.vel && f.effort.e == k.effort.e && f.support == k.support;
  }
  o.require(exact, "keyframe-exact at knots");

  const double dt = 1e-4;
  double c1 = 0.0;
  for (double x = dt; x < m.duration() - dt; x += 0.0071) {
    const VecX fd = (sample(m, x + dt).pos - sample(m, x - dt).pos) / (2.0 * dt);
    c1 = std::max(c1, (fd - sample(m, x).vel).cwiseAbs().maxCoeff());
  }
  o.require(c1 < 1e-3, "C1 finite difference max " + fmt("%.2e", c1) + " rad/s < 1e-3");

  Motion h;
  h.name = "pair";
  Keyframe a, b;
  b.t = 1.0;
  b.pos[kLeftKneePitch] = 1.0;
  h.keyframes = {a, b};
  const FrameCommand mid = sample(h, 0.5);
  o.require(std::abs(mid.pos[kLeftKneePitch] - 0.5) < 1e-12 && std::abs(mid.vel[kLeftKneePitch] - 1.5) < 1e-12,
            "Hermite midpoint " + fmt("%.6f", mid.pos[kLeftKneePitch]) + " rad, " +
                fmt("%.6f", mid.vel[kLeftKneePitch]) + " rad/s");
  return o;
}

bus::InstructionPacket random_packet(std::mt19937& rng) {
  std::uniform_int_distribution<int> id(0, 254), byte(0, 255), len(0, 250);
  static const std::uint8_t codes[] = {bus::instr::ping, bus::instr::read, bus::instr::write, bus::instr::sync_write,
                                       bus::instr::bulk_read};
  bus::InstructionPacket p;
  p.id = static_cast<std::uint8_t>(id(rng));
  p.instruction = codes[byte(rng) % 5];
  p.params.resize(len(rng) % (byte(rng) < 200 ? 12 : 251));
  for (auto& x : p.params) x = static_cast<std::uint8_t>(byte(rng));
  return p;
}

Outcome servo_bus() {
  Outcome o;
  std::mt19937 rng(107);
  int bad = 0;
  for (int i = 0; i < 100000; ++i) {
    const bus::InstructionPacket p = random_packet(rng);
    const bus::Bytes wire = bus::encode(p);
    const bus::DecodeResult r = bus::decode_stream(wire);
    if (r.frames.size() != 1 || r.consumed != wire.size() || !(r.frames[0].as_instruction() == p)) ++bad;
  }
  o.require(bad == 0, "fuzz round trip 1e5 packets, " + std::to_string(bad) + " mismatches");

  const std::string golden = bus::to_hex(bus::encode(bus::InstructionPacket{1, bus::instr::ping, {}}));
  o.require(golden == "FF FF 01 02 01 FB", "PING id 1 = " + golden);

  std::uniform_int_distribution<int> byte(0, 255);
  bus::Bytes stream;
  for (int i = 0; i < 300; ++i) {
    if (byte(rng) < 40) {
      for (int k = byte(rng) % 5; k > 0; --k) stream.push_back(static_cast<std::uint8_t>(byte(rng)));
    }
    bus::Bytes w = bus::encode(random_packet(rng));
    if (byte(rng) < 20) w[byte(rng) % w.size()] ^= 0x5A;
    stream.insert(stream.end(), w.begin(), w.end());
  }
  const auto whole = bus::decode_stream(stream).frames;
  bool split_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    bus::StreamDecoder dec;
    std::vector<bus::Frame> got;
    std::size_t at = 0;
    while (at < stream.size()) {
      const std::size_t n = std::min<std::size_t>(stream.size() - at, 1 + byte(rng) % (trial < 10 ? 3 : 64));
      auto f = dec.feed(std::span<const std::uint8_t>(stream).subspan(at, n));
      got.insert(got.end(), f.begin(), f.end());
      at += n;
    }
    split_ok = split_ok && got == whole;
  }
  o.require(split_ok, "chunk-split parser equivalence over 50 splits of " + std::to_string(whole.size()) + " frames");

  bus::VirtualBus b;
  for (int i = 1; i <= 20; ++i) {
    ServoState s;
    s.p_gain = 16.0;
    b.attach(bus::ServoDevice(static_cast<std::uint8_t>(i), ServoParams{}, "MX-106", s));
  }
  std::vector<bus::BulkReadRequest> req;
  for (std::uint8_t id = 1; id <= 20; ++id) req.push_back({id, bus::reg::present_position, 6});
  const double bulk = bus::bulk_read(b, req).elapsed;
  double individual = 0.0;
  for (const auto& q : req) {
    double e = 0.0;
    bus::read_register(b, q.id, q.addr, q.len, &e);
    individual += e;
  }
  o.require(bulk < individual, "bulk read " + fmt("%.3f", bulk * 1e3) + " ms < 20 individual " +
                                   fmt("%.3f", individual * 1e3) + " ms (ratio " + fmt("%.3f", bulk / individual) + ")");
  return o;
}

// Forward projection with the offsets applied in the camera frame.
std::optional<Vec2> oracle_project(const Vec2& ground, const CameraModel& c, double yaw, double pitch,
                                   const Vec3& dpos, const Vec3& drot, double h) {
  const RobotModel& m = fixtures::default_model();
  VecX q = VecX::Zero(m.num_joints());
  q[kHeadYaw] = yaw;
  q[kHeadPitch] = pitch;
  const Pose cam = forward_kinematics(m, q).at("camera");
  const Mat3 R_off = (Eigen::AngleAxisd(drot.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(drot.y(), Vec3::UnitY()) *
                      Eigen::AngleAxisd(drot.x(), Vec3::UnitX()))
                         .toRotationMatrix();
  const Mat3 R = cam.rotation.toRotationMatrix() * R_off;
  const Vec3 p = Vec3(0, 0, h) + cam.position + cam.rotation.toRotationMatrix() * dpos;
  const Vec3 local = R.transpose() * (Vec3(ground.x(), ground.y(), 0.0) - p);
  if (local.x() <= 1e-9) return std::nullopt;
  const double xn = -local.y() / local.x(), yn = -local.z() / local.x();
  const double r2 = xn * xn + yn * yn;
  if (std::sqrt(r2) > 3.0) return std::nullopt;
  const double s = 1.0 + c.k1 * r2 + c.k2 * r2 * r2 + c.k3 * r2 * r2 * r2;
  const Vec2 px(c.cx + c.fx * xn * s, c.cy + c.fy * yn * s);
  if (px.x() < 0 || px.y() < 0 || px.x() > c.width - 1 || px.y() > c.height - 1) return std::nullopt;
  return px;
}

Outcome camera_geometry() {
  Outcome o;
  const CameraModel c = load_camera(fixtures::data_path("camera/default_camera.json"));
  const double lim = monotone_radius(c);
  double inv = 0.0;
  for (double x = -3.0; x <= 3.0; x += 0.02) {
    for (double y = -3.0; y <= 3.0; y += 0.02) {
      const Vec2 p(x, y);
      if (p.norm() >= lim * 0.999) continue;
      inv = std::max(inv, (undistort_newton(distort(p, c), c).point - p).norm());
    }
  }
  o.require(inv < 1e-9, "undistort(distort) max " + fmt("%.2e", inv) + " < 1e-9 for r < " + fmt("%.3f", lim));

  const DistortionLuts L = build_luts(c);
  std::size_t ok = 0, total = 0;
  for (int v = 0; v < c.height; ++v) {
    for (int u = 0; u < c.width; ++u) {
      const auto und = L.undistort({double(u), double(v)});
      if (!und) continue;
      ++total;
      const auto raw = L.distort(*und);
      if (raw && (*raw - Vec2(u, v)).norm() < 0.05) ++ok;
    }
  }
  const double frac = total ? double(ok) / double(total) : 0.0;
  o.require(frac >= 0.99, "LUT pair within 0.05 px for " + fmt("%.4f", 100.0 * frac) + "% of " +
                              std::to_string(total) + " valid pixels");

  const RobotModel& m = fixtures::default_model();
  const double h = default_trunk_height(m);
  const Vec3 dpos(0.02, 0.0, 0.0), drot(0.0, 5.0 * kPi / 180.0, 0.0);
  double pos_err = 0.0, rot_err = 0.0;
  bool reduced = true;
  for (unsigned seed : {201u, 202u, 203u, 204u, 205u}) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.5);
    std::vector<LandmarkObservation> obs;
    for (double yaw : {-0.6, 0.0, 0.6}) {
      for (double pitch : {0.3, 0.7}) {
        for (int i = 0; i <= 8; ++i) {
          for (int j = 0; j <= 10; ++j) {
            const Vec2 ground(0.4 + 0.3 * i, -1.5 + 0.3 * j);
            const auto px = oracle_project(ground, c, yaw, pitch, dpos, drot, h);
            if (!px) continue;
            LandmarkObservation lo;
            lo.pixel = (*px + Vec2(noise(rng), noise(rng))).cwiseMax(Vec2(0, 0)).cwiseMin(Vec2(c.width - 1, c.height - 1));
            lo.ground = ground;
            lo.head_yaw = yaw;
            lo.head_pitch = pitch;
            obs.push_back(lo);
          }
        }
      }
    }
    const CalibrationReport r = calibrate_extrinsics(obs, c, m);
    pos_err = std::max(pos_err, (r.offsets.position - dpos).cwiseAbs().maxCoeff());
    rot_err = std::max(rot_err, (r.offsets.orientation - drot).cwiseAbs().maxCoeff());
    reduced = reduced && r.rms_after < r.rms_before;
  }
  o.require(pos_err < 5e-3, "calibration position err " + fmt("%.2f", pos_err * 1e3) + " mm < 5");
  o.require(rot_err < 0.5 * kPi / 180.0, "orientation err " + fmt("%.3f", rot_err * 180.0 / kPi) + " deg < 0.5");
  o.require(reduced, "after-RMS < before-RMS on all 5 noisy sets");
  return o;
}

std::string simulate_log(const Scenario& scenario, long ticks, std::string* transcript = nullptr) {
  RuntimeConfig cfg = load_runtime_config(fixtures::data_path("config/default.json"));
  Runtime rt(cfg);
  std::ostringstream log;
  run_loop(rt, scenario, ticks, &log);
  if (transcript) *transcript = rt.bus().transcript_text();
  return log.str();
}

Outcome determinism() {
  Outcome o;
  const Scenario walk = load_scenario(fixtures::data_path("scenarios/walk.json"));
  const std::string a = simulate_log(walk, 500), b = simulate_log(walk, 500);
  o.require(!a.empty() && a == b, "two 500-tick walk runs byte-identical (" + std::to_string(a.size()) + " bytes)");
  std::string transcript;
  simulate_log(load_scenario(fixtures::data_path("scenarios/fall.json")), 200, &transcript);
  // Broadcast WRITE of TORQUE_ENABLE (24) = 0.
  const std::string torque_off = bus::to_hex(bus::encode(bus::InstructionPacket{0xFE, bus::instr::write, {24, 0}}));
  o.require(transcript.find("TX " + torque_off) != std::string::npos, "fall transcript has TX " + torque_off);
  return o;
}

Outcome performance() {
  Outcome o;
  RuntimeConfig cfg = load_runtime_config(fixtures::data_path("config/default.json"));
  cfg.transcript = false;
  Runtime rt(cfg);
  Command walk;
  walk.type = Command::Type::gait;
  walk.gait = {0.5, 0.0, 0.2, true};
  rt.apply(walk);
  std::vector<double> ms;
  for (int i = 0; i < 2000; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    rt.tick();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / ms.size();
  const double worst = sorted.back();
  o.require(worst < 10.0, "2000 walking ticks: mean " + fmt("%.3f", mean) + " ms, p99 " +
                              fmt("%.3f", sorted[sorted.size() * 99 / 100]) + " ms, max " + fmt("%.3f", worst) +
                              " ms < 10");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"fused-angles round trip", fused_angles},
      {"complementary filter", complementary_filter},
      {"kinematics pair properties", kinematics},
      {"inverse dynamics fixtures", inverse_dynamics_fixtures},
      {"gait symmetry and periodicity", gait},
      {"motion player", motion_player},
      {"servo bus", servo_bus},
      {"camera geometry and calibration", camera_geometry},
      {"end-to-end determinism and fall", determinism},
      {"tick performance", performance},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
