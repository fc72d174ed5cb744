#include "hop/state_estimation.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

using namespace hop;
constexpr double kPi = std::numbers::pi;

namespace {

// Specific force measured by a stationary IMU with true attitude q.
Vec3 stationary_accel(const Quat& q) { return q.conjugate() * Vec3(0, 0, kGravity); }

ImuSample stationary(const Quat& truth, double dt) {
  ImuSample s;
  s.accel = stationary_accel(truth);
  s.dt = dt;
  return s;
}

// Exact body rate that carries a to b over dt.
Vec3 body_rate(const Quat& a, const Quat& b, double dt) {
  const Eigen::AngleAxisd aa(canonical(a.conjugate() * b));
  return aa.axis() * aa.angle() / dt;
}

}  // namespace

TEST_CASE("config validation") {
  FilterConfig c;
  CHECK_NOTHROW(c.validate());
  c.kp = 0.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.accel_trust_low = 13.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.ki = -1.0;
  CHECK_THROWS(make_filter(c));
}

TEST_CASE("fresh filter reports identity") {
  const FilterState s = make_filter({});
  const AttitudeEstimate e = attitude_estimate(s);
  CHECK(rotation_distance(e.quat, Quat::Identity()) == 0.0);
  CHECK(e.fused.yaw == 0.0);
  CHECK(e.fused.pitch == 0.0);
  CHECK(e.fused.roll == 0.0);
  CHECK(e.fused.hemisphere == 1);
}

TEST_CASE("invalid samples are rejected") {
  const FilterState s = make_filter({});
  ImuSample bad = stationary(Quat::Identity(), 0.0);
  CHECK_THROWS_AS(filter_update(s, bad), InvalidSample);
  bad.dt = 0.03;
  CHECK_THROWS_AS(filter_update(s, bad), InvalidSample);
  bad.dt = 0.01;
  bad.gyro.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(filter_update(s, bad), InvalidSample);
  bad.gyro.x() = 0.0;
  bad.mag = Vec3(std::numeric_limits<double>::infinity(), 0, 0);
  CHECK_THROWS_AS(filter_update(s, bad), InvalidSample);
}

TEST_CASE("gyro-only yaw integration") {
  FilterConfig c;
  c.accel_trust_low = 100.0;  // trust band excludes gravity
  c.accel_trust_high = 101.0;
  FilterState s = make_filter(c);
  ImuSample m;
  m.gyro = Vec3(0, 0, 1.0);
  m.accel = Vec3(0, 0, kGravity);
  m.dt = 0.001;
  for (int i = 0; i < 1000; ++i) s = filter_update(s, m);
  CHECK(std::abs(attitude_estimate(s).fused.yaw - 1.0) < 1e-3);
  CHECK(std::abs(attitude_estimate(s).fused.yaw - 1.0) < 1e-9);
}

TEST_CASE("stationary convergence is monotone") {
  FilterConfig c;
  c.ki = 0.0;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int trial = 0; trial < 20; ++trial) {
    const double tilt = (trial + 1) * (kPi / 3.0) / 20.0;
    const double dir = u(rng);
    const Quat start = quat_from_axis_angle(Vec3(std::cos(dir), std::sin(dir), 0), tilt) ;
    FilterState s = make_filter(c, rot_z(u(rng)) * start);
    double prev = tilt_angle(s.attitude);
    for (int i = 0; i < 300; ++i) {
      s = filter_update(s, stationary(Quat::Identity(), 0.01));
      const double err = tilt_angle(s.attitude);
      REQUIRE(err <= prev + 1e-12);
      prev = err;
    }
    // Linear decay rate kp: 6/kp s brings 60 deg well below 0.01 rad.
    CHECK(prev < 0.01);
  }
}

TEST_CASE("small-error decay rate equals kp") {
  FilterConfig c;
  c.ki = 0.0;
  FilterState s = make_filter(c, rot_x(1e-3));
  const double t = 1.0;
  for (int i = 0; i < 1000; ++i) s = filter_update(s, stationary(Quat::Identity(), 0.001));
  CHECK(tilt_angle(s.attitude) == doctest::Approx(1e-3 * std::exp(-c.kp * t)).epsilon(2e-3));
}

TEST_CASE("30 degree roll convergence") {
  FilterConfig c;
  c.ki = 0.0;
  FilterState s = make_filter(c);
  const Quat truth = rot_x(0.3);
  for (int i = 0; i < 300; ++i) s = filter_update(s, stationary(truth, 0.01));
  const AttitudeEstimate e = attitude_estimate(s);
  CHECK(std::abs(e.fused.roll - 0.3) < 0.01);
  CHECK(std::abs(e.fused.pitch) < 1e-6);
}

TEST_CASE("attitude estimate forms agree") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    FilterState s;
    s.attitude = Quat(n(rng), n(rng), n(rng), n(rng));
    const AttitudeEstimate e = attitude_estimate(s);
    const FusedAngles f = fused_from_quat(e.quat);
    CHECK(std::abs(f.yaw - e.fused.yaw) < 1e-9);
    CHECK(std::abs(f.pitch - e.fused.pitch) < 1e-9);
    CHECK(std::abs(f.roll - e.fused.roll) < 1e-9);
    CHECK(f.hemisphere == e.fused.hemisphere);
  }
}

TEST_CASE("attitude stays unit norm over a million updates") {
  FilterState s = make_filter({});
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  ImuSample m;
  m.dt = 0.01;
  double worst = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    m.gyro = Vec3(n(rng), n(rng), n(rng));
    m.accel = Vec3(n(rng), n(rng), kGravity + n(rng));
    s = filter_update(s, m);
    worst = std::max(worst, std::abs(s.attitude.norm() - 1.0));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("fused yaw constant under pure tilt motion") {
  FilterConfig c;
  FilterState s = make_filter(c);
  const double dt = 0.01;
  Quat prev = Quat::Identity();
  double worst = 0.0;
  for (int i = 1; i <= 2000; ++i) {
    const double t = i * dt;
    // Tilt-only trajectory: axis in the horizontal plane, zero fused yaw.
    const Quat cur = TiltRotation(quat_from_axis_angle(
                                      Vec3(std::cos(1.3 * t), std::sin(1.3 * t), 0), 0.4 * std::sin(2.1 * t)))
                         .quat();
    ImuSample m;
    m.gyro = body_rate(prev, cur, dt);
    m.accel = stationary_accel(cur);
    m.dt = dt;
    s = filter_update(s, m);
    worst = std::max(worst, std::abs(fused_yaw(s.attitude)));
    prev = cur;
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("gyro bias recovery with magnetometer") {
  FilterConfig c;
  c.use_mag = true;
  FilterState s = make_filter(c);
  const Vec3 bias(0.02, -0.015, 0.03);
  ImuSample m;
  m.gyro = bias;
  m.accel = Vec3(0, 0, kGravity);
  m.mag = Vec3(0.4, 0, -0.9).normalized();
  m.dt = 0.01;
  for (int i = 0; i < 20000; ++i) s = filter_update(s, m);
  CHECK((s.gyro_bias - bias).norm() < 0.05 * bias.norm());
  for (int k = 0; k < 3; ++k) CHECK(std::abs(s.gyro_bias[k] - bias[k]) < 0.05 * std::abs(bias[k]));
  CHECK(rotation_distance(s.attitude, Quat::Identity()) < 1e-3);
}

TEST_CASE("magnetometer heading reference") {
  FilterConfig c;
  c.use_mag = true;
  c.ki = 0.0;
  c.mag_heading = 0.0;
  // Robot truly yawed by 0.8: the global reference (1,0,-1) appears rotated by -0.8 in the body.
  const Quat truth = rot_z(0.8);
  const Vec3 mag_global = Vec3(1, 0, -1).normalized();
  FilterState s = make_filter(c);
  ImuSample m;
  m.accel = stationary_accel(truth);
  m.mag = truth.conjugate() * mag_global;
  m.dt = 0.01;
  for (int i = 0; i < 1000; ++i) s = filter_update(s, m);
  CHECK(fused_yaw(s.attitude) == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("out-of-band acceleration skips the correction") {
  FilterState s = make_filter({}, rot_x(0.2));
  ImuSample m = stationary(Quat::Identity(), 0.01);
  m.accel *= 2.0;
  const FilterState n = filter_update(s, m);
  CHECK(rotation_distance(n.attitude, s.attitude) < 1e-15);
  CHECK(n.gyro_bias == s.gyro_bias);
}

TEST_CASE("fall_pending") {
  const FallGuardConfig cfg;
  FusedAngles up;
  CHECK_FALSE(fall_pending(up, cfg, 10.0));
  FusedAngles tipped;
  tipped.pitch = 0.9;
  CHECK(fall_pending(tipped, cfg, 0.1));
  CHECK_FALSE(fall_pending(tipped, cfg, 0.01));
  FusedAngles flipped;
  flipped.hemisphere = -1;
  CHECK(fall_pending(flipped, cfg, 0.05));
  FusedAngles rolled;
  rolled.roll = -0.7;
  CHECK(fall_pending(rolled, cfg, 1.0));

  // Monotone in the elapsed time.
  bool prev = false;
  for (int i = 0; i <= 100; ++i) {
    const bool now = fall_pending(tipped, cfg, i * 0.001);
    CHECK((now || !prev));
    prev = now;
  }
}

TEST_CASE("fall guard debounces oscillation") {
  FallGuard guard;  // hold 0.05 s
  FusedAngles f;
  bool fired = false;
  for (int i = 0; i < 400; ++i) {
    f.pitch = (i / 3) % 2 == 0 ? 0.9 : 0.0;  // 30 ms above, 30 ms below
    fired = fired || guard.update(f, 0.01);
  }
  CHECK_FALSE(fired);
  f.pitch = 0.9;
  int ticks = 0;
  while (!guard.update(f, 0.01)) ++ticks;
  CHECK(ticks == 4);
  guard.reset();
  CHECK(guard.elapsed_over_limit() == 0.0);
}

TEST_CASE("IMU CSV round trip") {
  std::vector<ImuTraceRow> rows;
  for (int i = 0; i < 5; ++i) {
    ImuTraceRow r;
    r.t = 0.01 * i;
    r.sample.gyro = Vec3(0.1 * i, -0.2, 0.3);
    r.sample.accel = Vec3(0, 0.5, kGravity);
    r.sample.mag = Vec3(1, 0, -1);
    r.sample.dt = 0.01;
    rows.push_back(r);
  }
  std::stringstream ss;
  write_imu_csv(ss, rows);
  CHECK(ss.str().rfind("t,gx,gy,gz,ax,ay,az,mx,my,mz\n", 0) == 0);
  const auto back = read_imu_csv(ss);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].t == rows[i].t);
    CHECK(back[i].sample.gyro == rows[i].sample.gyro);
    CHECK(back[i].sample.accel == rows[i].sample.accel);
    REQUIRE(back[i].sample.mag.has_value());
    CHECK(*back[i].sample.mag == *rows[i].sample.mag);
    CHECK(back[i].sample.dt == doctest::Approx(0.01));
  }

  std::stringstream bad("t,gx,gy\n0,1,2\n");
  CHECK_THROWS(read_imu_csv(bad));
}
