#include "hop/orientation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hop {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kSingularTol = 1e-12;
}  // namespace

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

Quat canonical(const Quat& q) {
  const double c[4] = {q.w(), q.x(), q.y(), q.z()};
  for (double v : c) {
    if (v > 0.0) return q;
    if (v < 0.0) return Quat(-q.w(), -q.x(), -q.y(), -q.z());
  }
  return q;
}

Quat normalized(const Quat& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) return Quat::Identity();
  return Quat(q.w() / n, q.x() / n, q.y() / n, q.z() / n);
}

Quat quat_from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return Quat(std::cos(0.5 * angle), s * a.x(), s * a.y(), s * a.z());
}

Quat rot_x(double a) { return Quat(std::cos(0.5 * a), std::sin(0.5 * a), 0.0, 0.0); }
Quat rot_y(double a) { return Quat(std::cos(0.5 * a), 0.0, std::sin(0.5 * a), 0.0); }
Quat rot_z(double a) { return Quat(std::cos(0.5 * a), 0.0, 0.0, std::sin(0.5 * a)); }

double rotation_distance(const Quat& a, const Quat& b) {
  const Quat d = a.conjugate() * b;
  const double v = d.vec().norm();
  return 2.0 * std::atan2(v, std::abs(d.w()));
}

double fused_yaw(const Quat& q) {
  const Quat c = canonical(q);
  if (std::hypot(c.w(), c.z()) < kSingularTol) return 0.0;
  return wrap_angle(2.0 * std::atan2(c.z(), c.w()));
}

FusedAngles fused_from_quat(const Quat& q) {
  const Quat c = canonical(q);
  const double w = c.w(), x = c.x(), y = c.y(), z = c.z();

  // Third row of the rotation matrix: global z expressed in body coordinates.
  const double r31 = 2.0 * (x * z - w * y);
  const double r32 = 2.0 * (y * z + w * x);
  const double r33 = w * w - x * x - y * y + z * z;

  FusedAngles f;
  f.pitch = std::asin(std::clamp(-r31, -1.0, 1.0));
  f.roll = std::asin(std::clamp(r32, -1.0, 1.0));
  f.hemisphere = r33 >= 0.0 ? 1 : -1;
  if (std::hypot(w, z) < kSingularTol) {
    f.yaw = 0.0;
    f.yaw_singular = true;
  } else {
    f.yaw = wrap_angle(2.0 * std::atan2(z, w));
  }
  return f;
}

Quat quat_from_fused(const FusedAngles& f) {
  const double sth = std::sin(f.pitch);
  const double sphi = std::sin(f.roll);
  const double crit = sth * sth + sphi * sphi;
  if (!std::isfinite(crit) || crit > 1.0 + 1e-12) {
    throw OrientationError("fused angles violate sin^2(pitch) + sin^2(roll) <= 1");
  }
  // Tilt axis (cos g, sin g, 0) by tilt angle a, with sin(a) = |(sphi, sth)|.
  const double sin_a = std::sqrt(std::min(crit, 1.0));
  const double cos_a = (f.hemisphere >= 0 ? 1.0 : -1.0) * std::sqrt(std::max(0.0, 1.0 - crit));
  const double alpha = std::atan2(sin_a, cos_a);
  const double ch = std::cos(0.5 * alpha);
  const double sh = std::sin(0.5 * alpha);

  double ax = 1.0, ay = 0.0;
  if (sin_a > 0.0) {
    ax = sphi / sin_a;
    ay = sth / sin_a;
  }
  const Quat tilt(ch, sh * ax, sh * ay, 0.0);
  return normalized(rot_z(f.yaw) * tilt);
}

TiltRotation::TiltRotation(const Quat& q) {
  const Quat c = canonical(normalized(q));
  q_ = normalized(rot_z(-fused_yaw(c)) * c);
}

TiltRotation tilt_from_accel(const Vec3& accel) {
  const double n = accel.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw OrientationError("accelerometer vector must be finite and non-zero");
  }
  const Vec3 a = accel / n;
  // Shortest rotation taking a onto +z; its axis a x z is horizontal.
  Quat q;
  if (a.z() > -1.0 + 1e-12) {
    q = Quat(1.0 + a.z(), a.y(), -a.x(), 0.0);
  } else {
    q = Quat(0.0, 1.0, 0.0, 0.0);
  }
  return TiltRotation(normalized(q));
}

double tilt_angle(const Quat& q) {
  const Quat c = normalized(q);
  const double r33 = c.w() * c.w() - c.x() * c.x() - c.y() * c.y() + c.z() * c.z();
  const double s = 2.0 * std::hypot(c.x() * c.z() - c.w() * c.y(), c.y() * c.z() + c.w() * c.x());
  return std::atan2(s, r33);
}

}  // namespace hop
