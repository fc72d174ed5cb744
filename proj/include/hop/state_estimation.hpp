// Passive nonlinear complementary filter on the 9-axis IMU, and the fall guard.
#pragma once

#include "hop/orientation.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hop {

inline constexpr double kGravity = 9.81;

struct ImuSample {
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2 specific force, body frame
  std::optional<Vec3> mag;    // body frame direction
  double dt = 0.01;           // s
};

struct FilterConfig {
  double kp = 2.2;  // 1/s
  double ki = 0.1;  // 1/s^2
  bool use_mag = false;
  double accel_trust_low = 0.7 * kGravity;
  double accel_trust_high = 1.3 * kGravity;
  /// Fused yaw of the global magnetic reference direction.
  double mag_heading = 0.0;

  void validate() const;
};

struct FilterState {
  Quat attitude = Quat::Identity();
  Vec3 gyro_bias = Vec3::Zero();
  FilterConfig config;
};

class InvalidSample : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

FilterState make_filter(const FilterConfig& config, const Quat& initial = Quat::Identity());

/// One predict/correct step. Throws InvalidSample (leaving `state` untouched)
/// for non-finite data or dt outside (0, 20 ms].
FilterState filter_update(const FilterState& state, const ImuSample& sample);

struct AttitudeEstimate {
  Quat quat;
  FusedAngles fused;
};

AttitudeEstimate attitude_estimate(const FilterState& state);

struct FallGuardConfig {
  double pitch_limit = 0.6;
  double roll_limit = 0.6;
  double hold_time = 0.05;

  void validate() const;
};

bool over_fall_limit(const FusedAngles& f, const FallGuardConfig& cfg);

/// True iff the over-limit condition has held for at least hold_time.
bool fall_pending(const FusedAngles& f, const FallGuardConfig& cfg, double elapsed_over_limit);

/// Tracks how long the over-limit condition has held continuously.
class FallGuard {
 public:
  explicit FallGuard(FallGuardConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  /// Returns fall_pending after accounting for this interval.
  bool update(const FusedAngles& f, double dt);
  double elapsed_over_limit() const { return elapsed_; }
  void reset() { elapsed_ = 0.0; }

 private:
  FallGuardConfig cfg_;
  double elapsed_ = 0.0;
};

/// IMU trace CSV: header row, columns t,gx,gy,gz,ax,ay,az[,mx,my,mz].
struct ImuTraceRow {
  double t = 0.0;
  ImuSample sample;
};

std::vector<ImuTraceRow> read_imu_csv(std::istream& in);
void write_imu_csv(std::ostream& out, const std::vector<ImuTraceRow>& rows);

}  // namespace hop
