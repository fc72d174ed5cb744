#include "hop/state_estimation.hpp"

#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace hop {

namespace {

constexpr double kMaxDt = 0.02;

bool finite(const Vec3& v) { return v.allFinite(); }

Quat exp_increment(const Vec3& omega, double dt) {
  const double rate = omega.norm();
  if (rate * dt < 1e-300) return Quat::Identity();
  const double half = 0.5 * rate * dt;
  const Vec3 axis = omega / rate;
  const double s = std::sin(half);
  return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

}  // namespace

void FilterConfig::validate() const {
  if (!(kp > 0.0)) throw std::invalid_argument("filter kp must be > 0");
  if (!(ki >= 0.0)) throw std::invalid_argument("filter ki must be >= 0");
  if (!(accel_trust_low < accel_trust_high)) {
    throw std::invalid_argument("filter accel trust band must satisfy lower < upper");
  }
}

FilterState make_filter(const FilterConfig& config, const Quat& initial) {
  config.validate();
  FilterState s;
  s.config = config;
  s.attitude = normalized(initial);
  return s;
}

FilterState filter_update(const FilterState& state, const ImuSample& sample) {
  if (!(sample.dt > 0.0) || sample.dt > kMaxDt || !std::isfinite(sample.dt)) {
    throw InvalidSample("IMU sample dt must lie in (0, 0.02] s");
  }
  if (!finite(sample.gyro) || !finite(sample.accel) || (sample.mag && !finite(*sample.mag))) {
    throw InvalidSample("IMU sample contains non-finite components");
  }

  const FilterConfig& cfg = state.config;
  FilterState next = state;

  // Predict with the bias-compensated gyro, then correct toward the reference
  // built from this sample's accelerometer (and magnetometer).
  const Quat predicted = normalized(state.attitude * exp_increment(sample.gyro - state.gyro_bias, sample.dt));

  // Reference attitude: tilt from the accelerometer, heading from the
  // magnetometer if enabled, otherwise the predicted estimate's fused yaw.
  Vec3 error = Vec3::Zero();
  const double a_norm = sample.accel.norm();
  if (a_norm >= cfg.accel_trust_low && a_norm <= cfg.accel_trust_high && a_norm > 0.0) {
    const Quat tilt = tilt_from_accel(sample.accel).quat();
    double heading = fused_yaw(predicted);
    if (cfg.use_mag && sample.mag) {
      const Vec3 level = tilt * (*sample.mag);
      if (std::hypot(level.x(), level.y()) > 1e-9) {
        heading = wrap_angle(cfg.mag_heading - std::atan2(level.y(), level.x()));
      }
    }
    const Quat reference = rot_z(heading) * tilt;
    const Quat discrepancy = canonical(predicted.conjugate() * reference);
    // Twice the vector part approximates the rotation vector, so kp is the
    // small-error decay rate.
    error = 2.0 * discrepancy.vec();
  }

  next.gyro_bias = state.gyro_bias - cfg.ki * error * sample.dt;
  next.attitude = normalized(predicted * exp_increment(cfg.kp * error, sample.dt));
  return next;
}

AttitudeEstimate attitude_estimate(const FilterState& state) {
  const Quat q = normalized(state.attitude);
  return {q, fused_from_quat(q)};
}

void FallGuardConfig::validate() const {
  constexpr double half_pi = 1.5707963267948966;
  if (!(pitch_limit > 0.0 && pitch_limit < half_pi) || !(roll_limit > 0.0 && roll_limit < half_pi)) {
    throw std::invalid_argument("fall guard limits must lie in (0, pi/2)");
  }
  if (!(hold_time >= 0.0)) throw std::invalid_argument("fall guard hold_time must be >= 0");
}

bool over_fall_limit(const FusedAngles& f, const FallGuardConfig& cfg) {
  return std::abs(f.pitch) > cfg.pitch_limit || std::abs(f.roll) > cfg.roll_limit || f.hemisphere < 0;
}

bool fall_pending(const FusedAngles& f, const FallGuardConfig& cfg, double elapsed_over_limit) {
  return over_fall_limit(f, cfg) && elapsed_over_limit >= cfg.hold_time;
}

bool FallGuard::update(const FusedAngles& f, double dt) {
  if (over_fall_limit(f, cfg_)) {
    elapsed_ += dt;
  } else {
    elapsed_ = 0.0;
  }
  return fall_pending(f, cfg_, elapsed_);
}

std::vector<ImuTraceRow> read_imu_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("IMU trace: missing header row");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      while (!col.empty() && std::isspace(static_cast<unsigned char>(col.back()))) col.pop_back();
      header.push_back(col);
    }
  }
  static const char* kCols[] = {"t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"};
  if (header.size() != 7 && header.size() != 10) {
    throw std::runtime_error("IMU trace: expected 7 or 10 columns");
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != kCols[i]) throw std::runtime_error("IMU trace: unexpected column '" + header[i] + "'");
  }

  std::vector<ImuTraceRow> rows;
  std::size_t line_no = 1;
  double prev_t = 0.0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != header.size()) {
      throw std::runtime_error("IMU trace: wrong column count on line " + std::to_string(line_no));
    }
    ImuTraceRow r;
    r.t = v[0];
    r.sample.gyro = Vec3(v[1], v[2], v[3]);
    r.sample.accel = Vec3(v[4], v[5], v[6]);
    if (v.size() == 10) r.sample.mag = Vec3(v[7], v[8], v[9]);
    r.sample.dt = rows.empty() ? 0.0 : r.t - prev_t;
    prev_t = r.t;
    rows.push_back(r);
  }
  if (rows.size() > 1) rows.front().sample.dt = rows[1].sample.dt;
  return rows;
}

void write_imu_csv(std::ostream& out, const std::vector<ImuTraceRow>& rows) {
  const bool with_mag = !rows.empty() && rows.front().sample.mag.has_value();
  out << "t,gx,gy,gz,ax,ay,az" << (with_mag ? ",mx,my,mz" : "") << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    const auto& s = r.sample;
    out << r.t << ',' << s.gyro.x() << ',' << s.gyro.y() << ',' << s.gyro.z() << ',' << s.accel.x() << ','
        << s.accel.y() << ',' << s.accel.z();
    if (with_mag) {
      const Vec3 m = s.mag.value_or(Vec3::Zero());
      out << ',' << m.x() << ',' << m.y() << ',' << m.z();
    }
    out << '\n';
  }
}

}  // namespace hop
