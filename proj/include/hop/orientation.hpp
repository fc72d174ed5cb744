// Rotation representations: quaternions and fused angles.
#pragma once

#include <Eigen/Geometry>

#include <stdexcept>

namespace hop {

/// Unit quaternion, scalar-first, body-to-global.
using Quat = Eigen::Quaterniond;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class OrientationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fused angles: heading (fused yaw) separated from the tilt (fused pitch,
/// fused roll, hemisphere). sin^2(pitch) + sin^2(roll) <= 1 always holds.
struct FusedAngles {
  double yaw = 0.0;    // (-pi, pi]
  double pitch = 0.0;  // [-pi/2, pi/2]
  double roll = 0.0;   // [-pi/2, pi/2]
  int hemisphere = 1;  // +1: body z points into the upper global hemisphere
  bool yaw_singular = false;

  bool operator==(const FusedAngles&) const = default;
};

/// A rotation with zero fused yaw.
class TiltRotation {
 public:
  TiltRotation() = default;
  /// Strips the fused yaw from `q`.
  explicit TiltRotation(const Quat& q);

  const Quat& quat() const { return q_; }

 private:
  Quat q_ = Quat::Identity();
};

/// Wraps to (-pi, pi].
double wrap_angle(double a);

/// Returns q or -q, whichever has w > 0 (ties broken on x, y, z).
Quat canonical(const Quat& q);

Quat normalized(const Quat& q);
Quat quat_from_axis_angle(const Vec3& axis, double angle);
Quat rot_x(double a);
Quat rot_y(double a);
Quat rot_z(double a);

/// Rotation angle of a^-1 * b in [0, pi].
double rotation_distance(const Quat& a, const Quat& b);

double fused_yaw(const Quat& q);
FusedAngles fused_from_quat(const Quat& q);
/// Throws OrientationError if sin^2(pitch) + sin^2(roll) > 1.
Quat quat_from_fused(const FusedAngles& f);

/// Zero-yaw rotation whose body frame sees the global up axis along `accel`.
/// Throws OrientationError for a zero or non-finite vector.
TiltRotation tilt_from_accel(const Vec3& accel);

/// Tilt angle (angle between body z and global z), in [0, pi].
double tilt_angle(const Quat& q);

}  // namespace hop
