// Keyframe motions: parsing, cubic Hermite sampling and playback.
#pragma once

#include "hop/dynamics.hpp"
#include "hop/robot_model.hpp"

#include <json.hpp>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hop {

struct Keyframe {
  double t = 0.0;
  VecX pos = VecX::Zero(kNumJoints);
  VecX vel = VecX::Zero(kNumJoints);
  EffortVector effort;
  SupportCoefficients support;
};

struct Motion {
  std::string name;
  bool loop = false;
  std::string pre_state;
  std::string post_state;
  std::vector<Keyframe> keyframes;

  double duration() const { return keyframes.empty() ? 0.0 : keyframes.back().t; }
};

struct FrameCommand {
  VecX pos = VecX::Zero(kNumJoints);
  VecX vel = VecX::Zero(kNumJoints);
  EffortVector effort;
  SupportCoefficients support;
};

class MotionError : public std::invalid_argument {
 public:
  enum class Kind { schema, monotonicity, range };
  MotionError(Kind kind, int keyframe, std::string path, const std::string& what);
  Kind kind() const { return kind_; }
  /// Offending keyframe index, -1 when the error is not tied to one.
  int keyframe() const { return keyframe_; }
  const std::string& path() const { return path_; }

 private:
  Kind kind_;
  int keyframe_;
  std::string path_;
};

const char* to_string(MotionError::Kind k);

/// Throws MotionError. Joint columns may be listed in any order.
Motion parse_motion(const nlohmann::json& doc);
nlohmann::json to_json(const Motion& m);
/// Canonical text form (sorted keys, canonical joint order).
std::string serialize_motion(const Motion& m);

Motion load_motion(const std::string& path);
void save_motion(const std::string& path, const Motion& m);
/// Every *.json file in `dir`; throws MotionError on a duplicate name.
std::map<std::string, Motion> load_motion_library(const std::string& dir);

/// Throws std::out_of_range for t outside [0, duration] on a non-looping motion.
FrameCommand sample(const Motion& m, double t);

/// Samples at 0, dt, 2dt, ... and always the final keyframe at the duration.
std::vector<FrameCommand> play(const Motion& m, double dt);
std::vector<double> play_times(const Motion& m, double dt);

/// Sequential playback used by the control loop.
class MotionPlayer {
 public:
  explicit MotionPlayer(Motion m);
  /// Sample at the current time, then advance by dt.
  FrameCommand step(double dt);
  bool finished() const { return finished_; }
  double time() const { return t_; }
  const Motion& motion() const { return motion_; }

 private:
  Motion motion_;
  double t_ = 0.0;
  bool finished_ = false;
};

struct MotionCheckOptions {
  double control_rate = 100.0;    // Hz
  double max_velocity = 6.0;      // rad/s
  double max_step = 0.06;         // rad per control tick
  double max_velocity_jump = 0.5; // rad/s between consecutive finite-difference velocities
};

struct MotionViolation {
  std::string kind;  // limit | velocity | step | velocity_jump | joints
  int keyframe = -1;
  std::string joint;
  double t = 0.0;
  double value = 0.0;
  double bound = 0.0;
};

nlohmann::json to_json(const MotionViolation& v);

std::vector<MotionViolation> validate_against_model(const Motion& m, const RobotModel& model,
                                                    const MotionCheckOptions& opt = {});

}  // namespace hop
