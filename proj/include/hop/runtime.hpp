// Fixed-rate control loop tying estimation, behaviors, actuation and the bus
// together, driven by scenario scripts over a trunk-attitude plant.
#pragma once

#include "hop/bus.hpp"
#include "hop/dynamics.hpp"
#include "hop/gait.hpp"
#include "hop/motion.hpp"
#include "hop/robot_model.hpp"
#include "hop/state_estimation.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <future>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hop {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PlantConfig {
  double gyro_noise = 0.002;  // rad/s standard deviation
  double accel_noise = 0.05;  // m/s^2 standard deviation
  int servo_substeps = 10;    // servo integration steps per tick

  void validate() const;
};

struct RuntimeConfig {
  double loop_rate = 100.0;  // Hz
  std::string model_path;
  std::string motion_dir;
  std::string camera_path;  // empty: none
  std::uint64_t seed = 1;
  FilterConfig filter;
  GaitConfig gait;
  FallGuardConfig fall_guard;
  bus::BusTiming bus;
  PlantConfig plant;
  bool transcript = true;  // record bus traffic

  double dt() const { return 1.0 / loop_rate; }
  /// Throws ConfigError.
  void validate() const;
};

/// Relative paths are resolved against `base_dir`. Throws ConfigError.
RuntimeConfig runtime_config_from_json(const nlohmann::json& j, const std::string& base_dir);
RuntimeConfig load_runtime_config(const std::string& path);

struct Command {
  enum class Type { gait, play, stop, tilt, push, reset };
  Type type = Type::stop;
  GaitCommand gait;     // gait
  std::string motion;   // play
  double pitch = 0.0;   // tilt target, rad
  double roll = 0.0;
  Vec3 rate = Vec3::Zero();  // push, body angular velocity rad/s
  double duration = 0.0;     // tilt ramp or push length, s
};

const char* to_string(Command::Type t);

struct ScenarioEvent {
  double t = 0.0;  // s
  Command command;
};

using Scenario = std::vector<ScenarioEvent>;

/// JSON list of {"t", "type", ...}; returned sorted by time (stable).
/// Throws ConfigError.
Scenario parse_scenario(const nlohmann::json& j);
Scenario load_scenario(const std::string& path);

enum class CommandStatus { ok, unknown_motion, fallen, busy };

const char* to_string(CommandStatus s);

struct CommandResult {
  CommandStatus status = CommandStatus::ok;
  std::string message;
};

struct BusStats {
  double read_elapsed = 0.0;   // s
  double write_elapsed = 0.0;  // s
  int timeouts = 0;
};

struct RobotSnapshot {
  long tick = 0;
  double t = 0.0;  // s at the start of the tick
  Quat attitude = Quat::Identity();
  FusedAngles fused;
  VecX position = VecX::Zero(kNumJoints);  // measured over the bus
  VecX command = VecX::Zero(kNumJoints);   // behavior output before feed-forward
  VecX effort = VecX::Zero(kNumJoints);
  SupportCoefficients support;
  std::string behavior = "idle";  // idle | gait | motion:<name> | fallen
  BusStats bus;
  std::vector<std::string> errors;
};

nlohmann::json to_json(const RobotSnapshot& s);
/// One compact JSON line with sorted keys, no trailing newline.
std::string snapshot_line(const RobotSnapshot& s);

/// Thread-safe named motion store, optionally persisted to a directory.
class MotionLibrary {
 public:
  MotionLibrary() = default;
  explicit MotionLibrary(std::map<std::string, Motion> motions, std::string dir = {});
  static std::shared_ptr<MotionLibrary> load(const std::string& dir);

  std::vector<std::string> names() const;
  std::optional<Motion> find(const std::string& name) const;
  /// Stores and, with a directory, writes <dir>/<name>.json.
  void put(const Motion& m);
  bool erase(const std::string& name);

 private:
  mutable std::mutex mu_;
  std::map<std::string, Motion> motions_;
  std::string dir_;
};

/// True for names usable as file stems: [A-Za-z0-9_-]+.
bool valid_motion_name(const std::string& name);

enum class Behavior { idle, gait, motion, fallen };

class Runtime {
 public:
  Runtime(RuntimeConfig cfg, RobotModel model, std::shared_ptr<MotionLibrary> motions);
  /// Loads the model and motion library named in the config.
  explicit Runtime(RuntimeConfig cfg);

  /// Loop thread only.
  CommandResult apply(const Command& c);
  /// Any thread; drained at the start of the next tick.
  std::future<CommandResult> enqueue(Command c);

  /// One control cycle; the snapshot is also published.
  RobotSnapshot tick();
  /// Any thread; null before the first tick.
  std::shared_ptr<const RobotSnapshot> latest() const;

  const RuntimeConfig& config() const { return cfg_; }
  const RobotModel& model() const { return model_; }
  MotionLibrary& motions() { return *motions_; }
  const bus::VirtualBus& bus() const { return bus_; }
  Behavior behavior() const { return behavior_; }
  long ticks() const { return tick_; }
  /// True trunk attitude of the plant.
  const Quat& plant_attitude() const { return plant_q_; }
  /// Joint pose the idle behavior holds.
  const VecX& halt_pose() const { return halt_; }

 private:
  struct Pending {
    Command command;
    std::promise<CommandResult> result;
  };

  void disable_torque();
  Vec3 plant_rate();
  void step_servos(const SupportCoefficients& support);

  RuntimeConfig cfg_;
  RobotModel model_;
  std::shared_ptr<MotionLibrary> motions_;
  bus::VirtualBus bus_;
  std::vector<std::uint8_t> ids_;  // bus id per joint
  std::vector<ServoParams> params_;
  std::vector<GainSlewLimiter> gains_;

  FilterState filter_;
  FallGuard guard_;
  GaitState gait_;
  GaitCommand gait_cmd_;
  std::optional<MotionPlayer> player_;
  Behavior behavior_ = Behavior::idle;
  VecX halt_;
  VecX last_cmd_;
  VecX last_pos_;
  EffortVector last_effort_;
  SupportCoefficients last_support_;

  Quat plant_q_ = Quat::Identity();
  Vec3 push_rate_ = Vec3::Zero();
  double push_left_ = 0.0;
  std::optional<Quat> tilt_from_, tilt_to_;
  double tilt_elapsed_ = 0.0, tilt_duration_ = 0.0;
  std::mt19937_64 rng_;

  long tick_ = 0;
  mutable std::mutex mu_;
  std::deque<Pending> queue_;
  std::shared_ptr<const RobotSnapshot> latest_;
};

/// Applies each scenario event at the first tick whose start time reaches it
/// and runs `ticks` ticks; each snapshot is written as a log line when `log`
/// is given.
std::vector<RobotSnapshot> run_loop(Runtime& rt, const Scenario& scenario, long ticks, std::ostream* log = nullptr);

}  // namespace hop
