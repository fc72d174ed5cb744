// Wide-angle camera: radial distortion, lookup tables, ground projection and
// extrinsic calibration.
#pragma once

#include "hop/orientation.hpp"
#include "hop/robot_model.hpp"

#include <json.hpp>

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hop {

using Vec2 = Eigen::Vector2d;

struct CameraModel {
  int width = 640;
  int height = 480;
  double fx = 171.0;
  double fy = 171.0;
  double cx = 319.5;
  double cy = 239.5;
  double k1 = 0.0;
  double k2 = 0.0;
  double k3 = 0.0;

  void validate() const;
  bool distorted() const { return k1 != 0.0 || k2 != 0.0 || k3 != 0.0; }
};

CameraModel camera_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CameraModel& cam);
CameraModel load_camera(const std::string& path);

class CameraError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Radial polynomial p * (1 + k1 r^2 + k2 r^4 + k3 r^6) on normalized coordinates.
Vec2 distort(const Vec2& p, const CameraModel& cam);
double distort_radius(double r, const CameraModel& cam);

/// Undistorted radius where the radial polynomial stops increasing (capped).
double monotone_radius(const CameraModel& cam);
/// Distorted radius reached at monotone_radius().
double invertible_radius(const CameraModel& cam);

struct UndistortResult {
  Vec2 point;
  int iterations = 0;
};

/// Newton-Raphson on the scalar radius. Throws CameraError outside the
/// invertible radius, on a vanishing derivative or without convergence.
UndistortResult undistort_newton(const Vec2& p_d, const CameraModel& cam, double tol = 1e-9, int max_iter = 50);

Vec2 pixel_to_normalized(const Vec2& px, const CameraModel& cam);
Vec2 normalized_to_pixel(const Vec2& p, const CameraModel& cam);

/// Pixel-domain maps computed once so runtime lookups are constant time.
class DistortionLuts {
 public:
  /// Raw image pixel -> undistorted pixel, bilinear; nullopt in the invalid region.
  std::optional<Vec2> undistort(const Vec2& raw_px) const;
  /// Undistorted pixel -> raw image pixel, bilinear; nullopt outside the table.
  std::optional<Vec2> distort(const Vec2& undistorted_px) const;

  /// Node values (no interpolation).
  std::optional<Vec2> undistort_node(int u, int v) const;
  std::optional<Vec2> distort_node(int i, int j) const;  // grid index
  Vec2 distort_node_position(int i, int j) const;

  int inverse_width() const { return w_; }
  int inverse_height() const { return h_; }
  int forward_width() const { return fw_; }
  int forward_height() const { return fh_; }
  std::size_t valid_pixels() const;

 private:
  friend DistortionLuts build_luts(const CameraModel& cam);
  static std::optional<Vec2> bilinear(const std::vector<float>& map, const std::vector<unsigned char>& valid,
                                      int w, int h, double x, double y);

  int w_ = 0, h_ = 0;
  std::vector<float> inv_;            // 2 floats per raw pixel
  std::vector<unsigned char> inv_ok_;
  int fw_ = 0, fh_ = 0;
  double fx0_ = 0.0, fy0_ = 0.0;      // undistorted pixel of forward node (0, 0)
  std::vector<float> fwd_;
  std::vector<unsigned char> fwd_ok_;
};

DistortionLuts build_luts(const CameraModel& cam);

/// Small-angle mounting corrections applied in the nominal camera frame.
struct ExtrinsicOffsets {
  Vec3 position = Vec3::Zero();     // m
  Vec3 orientation = Vec3::Zero();  // rad, applied as rot_z * rot_y * rot_x

  Quat rotation() const;
  void validate() const;  // |orientation| < 0.35 per axis
};

/// Pose of the physical camera in the egocentric ground frame (origin on the
/// ground below the trunk, z up, heading-free trunk attitude).
Pose camera_pose(const RobotModel& model, double head_yaw, double head_pitch, const ExtrinsicOffsets& off,
                 const FusedAngles& trunk_attitude, double trunk_height);

/// Trunk origin height above the soles in the zero pose.
double default_trunk_height(const RobotModel& model);

struct GroundProjection {
  bool above_horizon = false;
  Vec2 point = Vec2::Zero();  // m, valid unless above_horizon
};

enum class UndistortMode { lut, newton };

struct ProjectionSetup {
  const CameraModel* camera = nullptr;
  const DistortionLuts* luts = nullptr;  // required for UndistortMode::lut
  const RobotModel* model = nullptr;
  double trunk_height = 0.0;
  UndistortMode mode = UndistortMode::lut;
};

/// Throws CameraError for an invalid pixel (outside the image or the invertible region).
GroundProjection pixel_to_egocentric(const Vec2& px, const ProjectionSetup& setup, double head_yaw, double head_pitch,
                                     const ExtrinsicOffsets& off, const FusedAngles& trunk_attitude = {});
GroundProjection ray_to_ground(const Vec2& normalized_undistorted, const Pose& camera);

/// Forward projection; nullopt when behind the camera or outside the image.
std::optional<Vec2> egocentric_to_pixel(const Vec2& ground, const CameraModel& cam, const Pose& camera);

struct NelderMeadOptions {
  double tol = 1e-8;      // simplex diameter
  int max_evals = 10000;
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;  // false: evaluation budget spent
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                             const std::vector<double>& x0, const std::vector<double>& scale,
                             const NelderMeadOptions& opt = {});

struct LandmarkObservation {
  Vec2 pixel = Vec2::Zero();
  Vec2 ground = Vec2::Zero();  // m, egocentric
  double head_yaw = 0.0;
  double head_pitch = 0.0;
};

std::vector<LandmarkObservation> read_landmarks_csv(std::istream& in);
void write_landmarks_csv(std::ostream& out, const std::vector<LandmarkObservation>& obs);

struct CalibrationReport {
  ExtrinsicOffsets offsets;
  double rms_before = 0.0;  // m
  double rms_after = 0.0;   // m
  int evals = 0;
  bool converged = false;
};

nlohmann::json to_json(const CalibrationReport& r);

/// Throws CameraError with fewer than 6 observations, fewer than 2 head
/// poses, or collinear landmarks.
CalibrationReport calibrate_extrinsics(const std::vector<LandmarkObservation>& obs, const CameraModel& cam,
                                       const RobotModel& model, const ExtrinsicOffsets& initial = {},
                                       const NelderMeadOptions& opt = {1e-10, 20000});

/// RMS ground-plane error of the observations under the given offsets.
double reprojection_rms(const std::vector<LandmarkObservation>& obs, const CameraModel& cam,
                        const RobotModel& model, const ExtrinsicOffsets& off);

}  // namespace hop
