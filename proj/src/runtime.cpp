#include "hop/runtime.hpp"

#include "json_read.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace hop {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double opt_number(const json& j, const char* key, double fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  return detail::number(j.at(key), detail::child_path(path, key));
}

bool opt_bool(const json& j, const char* key, bool fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw detail::SchemaViolation(path, "expected a boolean at '" + detail::child_path(path, key) + "'");
  return j.at(key).get<bool>();
}

const json& opt_object(const json& j, const char* key, const std::string& path) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  const json& v = j.at(key);
  if (!v.is_object()) {
    throw detail::SchemaViolation(path, "expected an object at '" + detail::child_path(path, key) + "'");
  }
  return v;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (fs::path(base) / path).lexically_normal().string();
}

}  // namespace

void PlantConfig::validate() const {
  if (!(gyro_noise >= 0.0 && accel_noise >= 0.0)) throw ConfigError("plant noise levels must be non-negative");
  if (servo_substeps < 1 || servo_substeps > 1000) throw ConfigError("plant servo_substeps must lie in [1, 1000]");
}

void RuntimeConfig::validate() const {
  if (!(loop_rate >= 50.0 && loop_rate <= 1000.0)) throw ConfigError("loop_rate must lie in [50, 1000] Hz");
  if (model_path.empty()) throw ConfigError("config: model path is required");
  try {
    filter.validate();
    gait.validate();
    fall_guard.validate();
    bus.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  plant.validate();
}

RuntimeConfig runtime_config_from_json(const json& j, const std::string& base_dir) {
  RuntimeConfig c;
  try {
    if (!j.is_object()) throw detail::SchemaViolation("", "config must be a JSON object");
    c.loop_rate = opt_number(j, "loop_rate", c.loop_rate, "");
    c.model_path = resolve(base_dir, detail::string_field(j, "model", ""));
    if (j.contains("motions")) c.motion_dir = resolve(base_dir, detail::string_field(j, "motions", ""));
    if (j.contains("camera")) c.camera_path = resolve(base_dir, detail::string_field(j, "camera", ""));
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) throw detail::SchemaViolation("seed", "seed must be a non-negative integer");
      c.seed = j.at("seed").get<std::uint64_t>();
    }
    c.transcript = opt_bool(j, "transcript", c.transcript, "");

    const json& f = opt_object(j, "filter", "");
    c.filter.kp = opt_number(f, "kp", c.filter.kp, "filter");
    c.filter.ki = opt_number(f, "ki", c.filter.ki, "filter");
    c.filter.use_mag = opt_bool(f, "use_mag", c.filter.use_mag, "filter");
    c.filter.accel_trust_low = opt_number(f, "accel_trust_low", c.filter.accel_trust_low, "filter");
    c.filter.accel_trust_high = opt_number(f, "accel_trust_high", c.filter.accel_trust_high, "filter");
    c.filter.mag_heading = opt_number(f, "mag_heading", c.filter.mag_heading, "filter");

    const json& fg = opt_object(j, "fall_guard", "");
    c.fall_guard.pitch_limit = opt_number(fg, "pitch_limit", c.fall_guard.pitch_limit, "fall_guard");
    c.fall_guard.roll_limit = opt_number(fg, "roll_limit", c.fall_guard.roll_limit, "fall_guard");
    c.fall_guard.hold_time = opt_number(fg, "hold_time", c.fall_guard.hold_time, "fall_guard");

    const json& b = opt_object(j, "bus", "");
    c.bus.bit_rate = opt_number(b, "bit_rate", c.bus.bit_rate, "bus");
    c.bus.bits_per_byte = opt_number(b, "bits_per_byte", c.bus.bits_per_byte, "bus");
    c.bus.turnaround = opt_number(b, "turnaround", c.bus.turnaround, "bus");
    c.bus.timeout = opt_number(b, "timeout", c.bus.timeout, "bus");

    const json& p = opt_object(j, "plant", "");
    c.plant.gyro_noise = opt_number(p, "gyro_noise", c.plant.gyro_noise, "plant");
    c.plant.accel_noise = opt_number(p, "accel_noise", c.plant.accel_noise, "plant");
    if (p.contains("servo_substeps")) {
      if (!p.at("servo_substeps").is_number_integer()) {
        throw detail::SchemaViolation("plant.servo_substeps", "plant.servo_substeps must be an integer");
      }
      c.plant.servo_substeps = p.at("servo_substeps").get<int>();
    }
  } catch (const detail::SchemaViolation& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (j.contains("gait")) {
    try {
      c.gait = gait_config_from_json(j.at("gait"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  c.validate();
  return c;
}

RuntimeConfig load_runtime_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return runtime_config_from_json(j, fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------

const char* to_string(Command::Type t) {
  switch (t) {
    case Command::Type::gait: return "gait";
    case Command::Type::play: return "play";
    case Command::Type::stop: return "stop";
    case Command::Type::tilt: return "tilt";
    case Command::Type::push: return "push";
    case Command::Type::reset: return "reset";
  }
  return "?";
}

const char* to_string(CommandStatus s) {
  switch (s) {
    case CommandStatus::ok: return "ok";
    case CommandStatus::unknown_motion: return "unknown_motion";
    case CommandStatus::fallen: return "fallen";
    case CommandStatus::busy: return "busy";
  }
  return "?";
}

Scenario parse_scenario(const json& j) {
  if (!j.is_array()) throw ConfigError("scenario must be a JSON list of events");
  Scenario out;
  try {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const json& e = j[i];
      const std::string path = detail::index_path("scenario", i);
      ScenarioEvent ev;
      ev.t = detail::number_field(e, "t", path);
      if (!(ev.t >= 0.0) || !std::isfinite(ev.t)) throw detail::SchemaViolation(path, path + ".t must be non-negative");
      const std::string type = detail::string_field(e, "type", path);
      Command& c = ev.command;
      if (type == "gait") {
        c.type = Command::Type::gait;
        c.gait.vx = opt_number(e, "vx", 0.0, path);
        c.gait.vy = opt_number(e, "vy", 0.0, path);
        c.gait.omega = opt_number(e, "omega", 0.0, path);
        c.gait.walk = opt_bool(e, "walk", true, path);
      } else if (type == "play") {
        c.type = Command::Type::play;
        c.motion = detail::string_field(e, "motion", path);
      } else if (type == "stop") {
        c.type = Command::Type::stop;
      } else if (type == "tilt") {
        c.type = Command::Type::tilt;
        c.pitch = opt_number(e, "pitch", 0.0, path);
        c.roll = opt_number(e, "roll", 0.0, path);
        c.duration = opt_number(e, "duration", 0.0, path);
        const double s = std::sin(c.pitch) * std::sin(c.pitch) + std::sin(c.roll) * std::sin(c.roll);
        if (!(std::abs(c.pitch) <= 1.5707963267948966 && std::abs(c.roll) <= 1.5707963267948966 && s <= 1.0)) {
          throw detail::SchemaViolation(path, path + ": tilt pitch/roll out of the fused-angle domain");
        }
      } else if (type == "push") {
        c.type = Command::Type::push;
        c.rate = detail::vec3_field(e, "rate", path);
        c.duration = detail::number_field(e, "duration", path);
      } else if (type == "reset") {
        c.type = Command::Type::reset;
      } else {
        throw detail::SchemaViolation(path, path + ": unknown event type '" + type + "'");
      }
      if (!(c.duration >= 0.0) || !std::isfinite(c.duration)) {
        throw detail::SchemaViolation(path, path + ".duration must be non-negative");
      }
      out.push_back(ev);
    }
  } catch (const detail::SchemaViolation& e) {
    throw ConfigError(e.what());
  }
  std::stable_sort(out.begin(), out.end(), [](const ScenarioEvent& a, const ScenarioEvent& b) { return a.t < b.t; });
  return out;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file " + path);
  try {
    return parse_scenario(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario file " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

json vec_json(const VecX& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

json to_json(const RobotSnapshot& s) {
  const Quat& q = s.attitude;
  return {{"tick", s.tick},
          {"t", s.t},
          {"attitude",
           {{"quat", {q.w(), q.x(), q.y(), q.z()}},
            {"fused",
             {{"yaw", s.fused.yaw}, {"pitch", s.fused.pitch}, {"roll", s.fused.roll}, {"hemisphere", s.fused.hemisphere}}}}},
          {"joints", {{"position", vec_json(s.position)}, {"command", vec_json(s.command)}, {"effort", vec_json(s.effort)}}},
          {"support", {{"left", s.support.left}, {"right", s.support.right}}},
          {"behavior", s.behavior},
          {"bus", {{"read_elapsed", s.bus.read_elapsed}, {"write_elapsed", s.bus.write_elapsed}, {"timeouts", s.bus.timeouts}}},
          {"errors", s.errors}};
}

std::string snapshot_line(const RobotSnapshot& s) { return to_json(s).dump(); }

// ---------------------------------------------------------------------------

bool valid_motion_name(const std::string& name) {
  if (name.empty() || name.size() > 128) return false;
  return std::all_of(name.begin(), name.end(), [](char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '_' || ch == '-';
  });
}

MotionLibrary::MotionLibrary(std::map<std::string, Motion> motions, std::string dir)
    : motions_(std::move(motions)), dir_(std::move(dir)) {}

std::shared_ptr<MotionLibrary> MotionLibrary::load(const std::string& dir) {
  if (dir.empty()) return std::make_shared<MotionLibrary>();
  return std::make_shared<MotionLibrary>(load_motion_library(dir), dir);
}

std::vector<std::string> MotionLibrary::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, m] : motions_) out.push_back(name);
  return out;
}

std::optional<Motion> MotionLibrary::find(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = motions_.find(name);
  if (it == motions_.end()) return std::nullopt;
  return it->second;
}

void MotionLibrary::put(const Motion& m) {
  if (!valid_motion_name(m.name)) throw std::invalid_argument("invalid motion name '" + m.name + "'");
  std::lock_guard lock(mu_);
  if (!dir_.empty()) save_motion((fs::path(dir_) / (m.name + ".json")).string(), m);
  motions_[m.name] = m;
}

bool MotionLibrary::erase(const std::string& name) {
  std::lock_guard lock(mu_);
  auto it = motions_.find(name);
  if (it == motions_.end()) return false;
  motions_.erase(it);
  if (!dir_.empty()) {
    std::error_code ec;
    fs::remove(fs::path(dir_) / (name + ".json"), ec);
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint8_t kReadAddr = bus::reg::present_position;
constexpr std::uint8_t kReadLen = 6;     // position, speed, load
constexpr std::uint8_t kWriteAddr = bus::reg::p_gain;
constexpr std::uint8_t kWriteLen = 4;    // p_gain, reserved, goal_position

EffortVector behavior_efforts(const GaitConfig& g) {
  EffortVector e;
  for (int i = 0; i < kNumJoints; ++i) {
    e.e[i] = i <= kHeadPitch ? g.head_effort : i < kLeftHipYaw ? g.arm_effort : g.leg_effort;
  }
  return e;
}

Quat exp_map(const Vec3& w) {
  const double a = w.norm();
  if (a < 1e-300) return Quat::Identity();
  return quat_from_axis_angle(w / a, a);
}

Vec3 log_map(const Quat& q) {
  const Eigen::AngleAxisd aa(canonical(q));
  return aa.axis() * aa.angle();
}

}  // namespace

Runtime::Runtime(RuntimeConfig cfg) : Runtime(cfg, load_model(cfg.model_path), MotionLibrary::load(cfg.motion_dir)) {}

Runtime::Runtime(RuntimeConfig cfg, RobotModel model, std::shared_ptr<MotionLibrary> motions)
    : cfg_(std::move(cfg)),
      model_(std::move(model)),
      motions_(motions ? std::move(motions) : std::make_shared<MotionLibrary>()),
      bus_(cfg_.bus),
      guard_(cfg_.fall_guard),
      rng_(cfg_.seed) {
  cfg_.validate();
  if (!model_.is_humanoid() || model_.num_joints() != kNumJoints) {
    throw ConfigError("runtime needs a humanoid model with " + std::to_string(kNumJoints) + " joints");
  }
  filter_ = make_filter(cfg_.filter);
  gait_ = initial_gait_state(model_, cfg_.gait);
  halt_ = halt_joint_pose(model_, cfg_.gait);
  last_cmd_ = halt_;
  last_effort_ = behavior_efforts(cfg_.gait);
  bus_.set_transcript_enabled(cfg_.transcript);
  for (int i = 0; i < kNumJoints; ++i) {
    const Joint& jn = model_.joints()[i];
    ServoParams p = servo_params(jn.servo);
    ServoState s;
    s.position = halt_[i];
    s.goal_position = rad_to_ticks(halt_[i]);
    s.p_gain = std::round(effective_p_gain(last_effort_.e[i], p));
    s.torque_enabled = true;
    if (jn.servo.id < 0 || jn.servo.id >= bus::kBroadcastId) throw ConfigError("servo id out of range for " + jn.name);
    try {
      bus_.attach(bus::ServoDevice(static_cast<std::uint8_t>(jn.servo.id), p, jn.servo.type, s));
    } catch (const bus::BusError& e) {
      throw ConfigError(std::string("model servo ids: ") + e.what());
    }
    ids_.push_back(static_cast<std::uint8_t>(jn.servo.id));
    params_.push_back(p);
    gains_.emplace_back(s.p_gain);
  }
  last_pos_ = halt_;
}

CommandResult Runtime::apply(const Command& c) {
  using T = Command::Type;
  switch (c.type) {
    case T::gait:
      if (behavior_ == Behavior::fallen) return {CommandStatus::fallen, "robot has fallen"};
      if (behavior_ == Behavior::motion) return {CommandStatus::busy, "a motion is playing"};
      gait_cmd_ = c.gait.clamped();
      if (gait_cmd_.walk && behavior_ == Behavior::idle) behavior_ = Behavior::gait;
      return {};
    case T::play: {
      if (behavior_ == Behavior::fallen) return {CommandStatus::fallen, "robot has fallen"};
      auto m = motions_->find(c.motion);
      if (!m) return {CommandStatus::unknown_motion, "unknown motion '" + c.motion + "'"};
      if (m->keyframes.empty()) return {CommandStatus::unknown_motion, "motion '" + c.motion + "' has no keyframes"};
      gait_ = initial_gait_state(model_, cfg_.gait);
      gait_cmd_ = {};
      player_.emplace(std::move(*m));
      behavior_ = Behavior::motion;
      return {};
    }
    case T::stop:
      if (behavior_ == Behavior::motion) {
        player_.reset();
        behavior_ = Behavior::idle;
      }
      gait_cmd_.walk = false;
      return {};
    case T::tilt: {
      FusedAngles f = fused_from_quat(plant_q_);
      f.pitch = c.pitch;
      f.roll = c.roll;
      f.hemisphere = 1;
      f.yaw_singular = false;
      tilt_from_ = plant_q_;
      tilt_to_ = quat_from_fused(f);
      tilt_elapsed_ = 0.0;
      tilt_duration_ = c.duration;
      return {};
    }
    case T::push:
      push_rate_ = c.rate;
      push_left_ = c.duration;
      return {};
    case T::reset: {
      bus::InstructionPacket p{bus::kBroadcastId, bus::instr::write, {bus::reg::torque_enable, 1}};
      bus_.transact(p);
      plant_q_ = Quat::Identity();
      tilt_from_.reset();
      tilt_to_.reset();
      push_left_ = 0.0;
      filter_ = make_filter(cfg_.filter);
      guard_.reset();
      gait_ = initial_gait_state(model_, cfg_.gait);
      gait_cmd_ = {};
      player_.reset();
      behavior_ = Behavior::idle;
      return {};
    }
  }
  return {};
}

std::future<CommandResult> Runtime::enqueue(Command c) {
  std::lock_guard lock(mu_);
  queue_.push_back({std::move(c), {}});
  return queue_.back().result.get_future();
}

std::shared_ptr<const RobotSnapshot> Runtime::latest() const {
  std::lock_guard lock(mu_);
  return latest_;
}

void Runtime::disable_torque() {
  bus::InstructionPacket p{bus::kBroadcastId, bus::instr::write, {bus::reg::torque_enable, 0}};
  bus_.transact(p);
}

Vec3 Runtime::plant_rate() {
  // Body angular velocity over the coming tick.
  const double dt = cfg_.dt();
  Quat next = plant_q_;
  if (tilt_to_) {
    tilt_elapsed_ += dt;
    const double s = tilt_duration_ <= 0.0 ? 1.0 : std::min(1.0, tilt_elapsed_ / tilt_duration_);
    next = tilt_from_->slerp(s, *tilt_to_);
    if (s >= 1.0) {
      tilt_from_.reset();
      tilt_to_.reset();
    }
  }
  if (push_left_ > 0.0) {
    const double h = std::min(dt, push_left_);
    next = next * exp_map(push_rate_ * h);
    push_left_ -= h;
  }
  next = normalized(next);
  const Vec3 w = log_map(plant_q_.conjugate() * next) / dt;
  plant_q_ = next;
  return w;
}

void Runtime::step_servos(const SupportCoefficients& support) {
  const int n = cfg_.plant.servo_substeps;
  const double h = cfg_.dt() / n;
  const Vec3 g = plant_q_.conjugate() * Vec3(0.0, 0.0, -kGravity);
  const bool limp = behavior_ == Behavior::fallen;
  const VecX lo = model_.lower_limits(), hi = model_.upper_limits();
  VecX mid(kNumJoints);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < kNumJoints; ++i) {
      const ServoState& s = bus_.device(ids_[i])->state();
      mid[i] = s.position + 0.5 * h * s.velocity;
    }
    VecX load = VecX::Zero(kNumJoints);
    // Lying on the ground the limbs carry no gravity load.
    if (!limp) load = -inverse_dynamics(model_, static_point(mid), g, support);
    for (int i = 0; i < kNumJoints; ++i) {
      bus::ServoDevice& d = *bus_.device(ids_[i]);
      ServoState next = servo_step(d.state(), params_[i], load[i], h);
      if (next.position < lo[i] || next.position > hi[i]) {
        next.position = std::clamp(next.position, lo[i], hi[i]);
        next.velocity = 0.0;
      }
      d.set_load(servo_motor_torque(next, params_[i]));
      d.state() = next;
    }
  }
}

RobotSnapshot Runtime::tick() {
  std::deque<Pending> drained;
  {
    std::lock_guard lock(mu_);
    drained.swap(queue_);
  }
  for (auto& p : drained) p.result.set_value(apply(p.command));

  const double dt = cfg_.dt();
  RobotSnapshot snap;
  snap.tick = tick_;
  snap.t = tick_ * dt;

  // Plant and IMU.
  const Quat q_start = plant_q_;
  const Vec3 w = plant_rate();
  std::normal_distribution<double> gyro_n(0.0, 1.0), accel_n(0.0, 1.0);
  ImuSample imu;
  imu.dt = dt;
  imu.gyro = w;
  imu.accel = q_start.conjugate() * Vec3(0.0, 0.0, kGravity);
  for (int k = 0; k < 3; ++k) imu.gyro[k] += cfg_.plant.gyro_noise * gyro_n(rng_);
  for (int k = 0; k < 3; ++k) imu.accel[k] += cfg_.plant.accel_noise * accel_n(rng_);

  // Bus read.
  std::vector<bus::BulkReadRequest> req;
  for (std::uint8_t id : ids_) req.push_back({id, kReadAddr, kReadLen});
  const bus::BulkReadResult rd = bus::bulk_read(bus_, req);
  snap.bus.read_elapsed = rd.elapsed;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& e = rd.entries[i];
    if (e.timeout || e.error || e.data.size() != kReadLen) {
      ++snap.bus.timeouts;
      snap.errors.push_back(std::string("read failed for ") + kJointNames[i]);
      continue;
    }
    last_pos_[i] = ticks_to_rad(bus::from_le16(std::span<const std::uint8_t>(e.data).subspan(0, 2)));
  }
  snap.position = last_pos_;

  // Estimation and the fall guard.
  try {
    filter_ = filter_update(filter_, imu);
  } catch (const std::exception& e) {
    snap.errors.push_back(std::string("filter: ") + e.what());
  }
  const AttitudeEstimate est = attitude_estimate(filter_);
  snap.attitude = est.quat;
  snap.fused = est.fused;
  if (guard_.update(est.fused, dt) && behavior_ != Behavior::fallen) {
    disable_torque();
    player_.reset();
    gait_ = initial_gait_state(model_, cfg_.gait);
    gait_cmd_ = {};
    behavior_ = Behavior::fallen;
    snap.errors.push_back("fall detected: torque disabled");
  }

  // Behavior.
  VecX q = last_cmd_, qd = VecX::Zero(kNumJoints);
  EffortVector effort = last_effort_;
  SupportCoefficients support = last_support_;
  std::string label;
  switch (behavior_) {
    case Behavior::idle:
      q = halt_;
      effort = behavior_efforts(cfg_.gait);
      support = {};
      label = "idle";
      break;
    case Behavior::gait: {
      const GaitOutput out = gait_step(gait_, gait_cmd_, est.fused, model_, cfg_.gait, dt);
      gait_ = out.state;
      q = out.q;
      effort = out.effort;
      support = out.support;
      if (out.ik_fallback) snap.errors.push_back("gait: inverse kinematics fallback");
      label = "gait";
      if (!gait_.walking && gait_.amplitude <= 0.0) behavior_ = Behavior::idle;
      break;
    }
    case Behavior::motion: {
      label = "motion:" + player_->motion().name;
      const FrameCommand f = player_->step(dt);
      q = f.pos;
      qd = f.vel;
      effort = f.effort;
      support = f.support;
      if (player_->finished()) {
        player_.reset();
        behavior_ = Behavior::idle;
      }
      break;
    }
    case Behavior::fallen:
      label = "fallen";
      break;
  }
  if (model_.clamp_to_limits(q)) snap.errors.push_back("command clamped to joint limits");
  if (support.left <= 0.0 && support.right <= 0.0) support = {};
  last_cmd_ = q;
  last_effort_ = effort;
  last_support_ = support;
  snap.command = q;
  snap.effort = effort.e;
  snap.support = support;
  snap.behavior = label;

  // Feed-forward and the bus write.
  if (label != "fallen") {
    const Vec3 g = est.quat.conjugate() * Vec3(0.0, 0.0, -kGravity);
    VecX tau = VecX::Zero(kNumJoints);
    try {
      tau = inverse_dynamics(model_, {q, qd, VecX::Zero(kNumJoints)}, g, support);
    } catch (const std::exception& e) {
      snap.errors.push_back(std::string("inverse dynamics: ") + e.what());
    }
    std::vector<std::pair<std::uint8_t, bus::Bytes>> data;
    for (int i = 0; i < kNumJoints; ++i) {
      const double goal = q[i] + torque_to_position_offset(tau[i], params_[i]);
      const double gain = gains_[i].step(effective_p_gain(effort.e[i], params_[i]), params_[i].max_gain_step);
      const int ticks = std::clamp(rad_to_ticks(goal), 0, kTicksPerRev - 1);
      bus::Bytes b{static_cast<std::uint8_t>(std::clamp(std::lround(gain), 0L, 254L)), 0};
      const bus::Bytes g16 = bus::le16(ticks);
      b.insert(b.end(), g16.begin(), g16.end());
      data.emplace_back(ids_[i], std::move(b));
    }
    snap.bus.write_elapsed = bus::sync_write(bus_, kWriteAddr, kWriteLen, data);
  }

  step_servos(support);
  ++tick_;

  auto published = std::make_shared<const RobotSnapshot>(snap);
  {
    std::lock_guard lock(mu_);
    latest_ = std::move(published);
  }
  return snap;
}

std::vector<RobotSnapshot> run_loop(Runtime& rt, const Scenario& scenario, long ticks, std::ostream* log) {
  if (ticks < 0) throw std::invalid_argument("tick count must be non-negative");
  std::vector<RobotSnapshot> out;
  out.reserve(static_cast<std::size_t>(ticks));
  const double dt = rt.config().dt();
  std::size_t next = 0;
  for (long k = 0; k < ticks; ++k) {
    const double t = rt.ticks() * dt;
    std::vector<std::string> notes;
    while (next < scenario.size() && scenario[next].t <= t + 1e-9 * dt) {
      const CommandResult r = rt.apply(scenario[next].command);
      if (r.status != CommandStatus::ok) {
        notes.push_back(std::string(to_string(scenario[next].command.type)) + " rejected: " + r.message);
      }
      ++next;
    }
    RobotSnapshot s = rt.tick();
    s.errors.insert(s.errors.begin(), notes.begin(), notes.end());
    if (log) *log << snapshot_line(s) << '\n';
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hop
