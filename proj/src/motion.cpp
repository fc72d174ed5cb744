#include "hop/motion.hpp"

#include "json_read.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hop {

using nlohmann::json;

MotionError::MotionError(Kind kind, int keyframe, std::string path, const std::string& what)
    : std::invalid_argument(what), kind_(kind), keyframe_(keyframe), path_(std::move(path)) {}

const char* to_string(MotionError::Kind k) {
  switch (k) {
    case MotionError::Kind::schema: return "schema";
    case MotionError::Kind::monotonicity: return "monotonicity";
    case MotionError::Kind::range: return "range";
  }
  return "unknown";
}

namespace {

constexpr double kTimeEps = 1e-9;

using Kind = MotionError::Kind;

[[noreturn]] void fail(Kind kind, int kf, const std::string& path, const std::string& msg) {
  throw MotionError(kind, kf, path, "motion: " + msg + (kf >= 0 ? " (keyframe " + std::to_string(kf) + ")" : ""));
}

// Column i of the file -> canonical joint index.
std::vector<int> joint_columns(const json& doc) {
  if (!doc.contains("joints") || !doc["joints"].is_array()) {
    fail(Kind::schema, -1, "joints", "missing joints array");
  }
  const json& names = doc["joints"];
  if (names.size() != kNumJoints) {
    fail(Kind::schema, -1, "joints", "expected " + std::to_string(kNumJoints) + " joint names");
  }
  std::vector<int> cols(kNumJoints, -1);
  std::vector<bool> seen(kNumJoints, false);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string path = detail::index_path("joints", i);
    if (!names[i].is_string()) fail(Kind::schema, -1, path, "joint name must be a string");
    const std::string n = names[i].get<std::string>();
    auto it = std::find(kJointNames.begin(), kJointNames.end(), n);
    if (it == kJointNames.end()) fail(Kind::schema, -1, path, "unknown joint '" + n + "'");
    const int idx = static_cast<int>(it - kJointNames.begin());
    if (seen[idx]) fail(Kind::schema, -1, path, "duplicate joint '" + n + "'");
    seen[idx] = true;
    cols[i] = idx;
  }
  return cols;
}

VecX joint_vector(const json& kf, const char* key, const std::vector<int>& cols, int index,
                  const std::string& base) {
  const std::string path = detail::child_path(base, key);
  if (!kf.contains(key)) fail(Kind::schema, index, path, std::string("missing field '") + key + "'");
  const json& a = kf[key];
  if (!a.is_array() || a.size() != kNumJoints) {
    fail(Kind::schema, index, path, std::string("'") + key + "' must be an array of 20 numbers");
  }
  VecX v(kNumJoints);
  for (int i = 0; i < kNumJoints; ++i) {
    if (!a[i].is_number()) fail(Kind::schema, index, detail::index_path(path, i), "expected a number");
    v[cols[i]] = a[i].get<double>();
  }
  return v;
}

double unit_field(const json& obj, const char* key, int index, const std::string& base) {
  const std::string path = detail::child_path(base, key);
  if (!obj.is_object() || !obj.contains(key) || !obj[key].is_number()) {
    fail(Kind::schema, index, path, std::string("expected a number '") + key + "'");
  }
  const double v = obj[key].get<double>();
  if (!(v >= 0.0 && v <= 1.0)) fail(Kind::range, index, path, std::string(key) + " outside [0, 1]");
  return v;
}

std::string optional_string(const json& doc, const char* key) {
  if (!doc.contains(key)) return {};
  if (!doc[key].is_string()) fail(Kind::schema, -1, key, std::string("'") + key + "' must be a string");
  return doc[key].get<std::string>();
}

json column(const VecX& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

Motion parse_motion(const json& doc) {
  if (!doc.is_object()) fail(Kind::schema, -1, "", "document must be an object");
  Motion m;
  if (!doc.contains("name") || !doc["name"].is_string() || doc["name"].get<std::string>().empty()) {
    fail(Kind::schema, -1, "name", "name must be a non-empty string");
  }
  m.name = doc["name"].get<std::string>();
  if (doc.contains("loop")) {
    if (!doc["loop"].is_boolean()) fail(Kind::schema, -1, "loop", "loop must be a boolean");
    m.loop = doc["loop"].get<bool>();
  }
  m.pre_state = optional_string(doc, "pre_state");
  m.post_state = optional_string(doc, "post_state");

  const std::vector<int> cols = joint_columns(doc);
  if (!doc.contains("keyframes") || !doc["keyframes"].is_array()) {
    fail(Kind::schema, -1, "keyframes", "missing keyframes array");
  }
  const json& kfs = doc["keyframes"];
  if (kfs.size() < 2) fail(Kind::schema, -1, "keyframes", "a motion needs at least two keyframes");

  for (std::size_t i = 0; i < kfs.size(); ++i) {
    const int idx = static_cast<int>(i);
    const std::string base = detail::index_path("keyframes", i);
    const json& kf = kfs[i];
    if (!kf.is_object()) fail(Kind::schema, idx, base, "keyframe must be an object");
    Keyframe k;
    if (!kf.contains("t") || !kf["t"].is_number()) fail(Kind::schema, idx, base + ".t", "missing time 't'");
    k.t = kf["t"].get<double>();
    if (i == 0 && k.t != 0.0) fail(Kind::monotonicity, idx, base + ".t", "first keyframe must be at t = 0");
    if (i > 0 && !(k.t > m.keyframes.back().t)) {
      fail(Kind::monotonicity, idx, base + ".t", "keyframe times must be strictly increasing");
    }
    k.pos = joint_vector(kf, "pos", cols, idx, base);
    k.vel = joint_vector(kf, "vel", cols, idx, base);
    const VecX effort = joint_vector(kf, "effort", cols, idx, base);
    for (int j = 0; j < kNumJoints; ++j) {
      if (!(effort[j] >= 0.0 && effort[j] <= 1.0)) {
        fail(Kind::range, idx, base + ".effort", std::string("effort of ") + kJointNames[j] + " outside [0, 1]");
      }
    }
    k.effort.e = effort;
    if (!kf.contains("support")) fail(Kind::schema, idx, base + ".support", "missing support coefficients");
    k.support.left = unit_field(kf["support"], "left", idx, base + ".support");
    k.support.right = unit_field(kf["support"], "right", idx, base + ".support");
    if (k.support.left + k.support.right <= 0.0) {
      fail(Kind::range, idx, base + ".support", "support coefficients must not both be zero");
    }
    m.keyframes.push_back(std::move(k));
  }
  return m;
}

json to_json(const Motion& m) {
  json doc;
  doc["name"] = m.name;
  doc["loop"] = m.loop;
  doc["pre_state"] = m.pre_state;
  doc["post_state"] = m.post_state;
  doc["joints"] = json::array();
  for (const char* n : kJointNames) doc["joints"].push_back(n);
  doc["keyframes"] = json::array();
  for (const Keyframe& k : m.keyframes) {
    doc["keyframes"].push_back({{"t", k.t},
                                {"pos", column(k.pos)},
                                {"vel", column(k.vel)},
                                {"effort", column(k.effort.e)},
                                {"support", {{"left", k.support.left}, {"right", k.support.right}}}});
  }
  return doc;
}

std::string serialize_motion(const Motion& m) { return to_json(m).dump(2) + "\n"; }

Motion load_motion(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open motion file " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw MotionError(Kind::schema, -1, "", "motion " + path + ": " + e.what());
  }
  return parse_motion(doc);
}

void save_motion(const std::string& path, const Motion& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write motion file " + path);
  out << serialize_motion(m);
}

std::map<std::string, Motion> load_motion_library(const std::string& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, Motion> lib;
  for (const auto& f : files) {
    Motion m = load_motion(f.string());
    if (lib.count(m.name)) fail(Kind::schema, -1, "name", "duplicate motion name '" + m.name + "'");
    lib.emplace(m.name, std::move(m));
  }
  return lib;
}

FrameCommand sample(const Motion& m, double t) {
  if (m.keyframes.size() < 2) throw std::invalid_argument("motion has fewer than two keyframes");
  const double duration = m.duration();
  if (m.loop) {
    t = std::fmod(t, duration);
    if (t < 0.0) t += duration;
  } else if (!(t >= 0.0 && t <= duration)) {
    throw std::out_of_range("sample time outside [0, duration] of motion '" + m.name + "'");
  }

  FrameCommand out;
  const Keyframe& last = m.keyframes.back();
  if (t >= duration) {
    out.pos = last.pos;
    out.vel = last.vel;
    out.effort = last.effort;
    out.support = last.support;
    return out;
  }
  auto it = std::upper_bound(m.keyframes.begin(), m.keyframes.end(), t,
                             [](double v, const Keyframe& k) { return v < k.t; });
  const Keyframe& a = *(it - 1);
  const Keyframe& b = *it;
  const double h = b.t - a.t;
  const double s = (t - a.t) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  const double d00 = 6 * s2 - 6 * s, d10 = 3 * s2 - 4 * s + 1, d01 = -6 * s2 + 6 * s, d11 = 3 * s2 - 2 * s;
  if (s == 0.0) {
    out.pos = a.pos;
    out.vel = a.vel;
  } else {
    out.pos = h00 * a.pos + (h10 * h) * a.vel + h01 * b.pos + (h11 * h) * b.vel;
    out.vel = (d00 / h) * a.pos + d10 * a.vel + (d01 / h) * b.pos + d11 * b.vel;
  }
  out.effort.e = (1.0 - s) * a.effort.e + s * b.effort.e;
  out.effort.clamp();
  out.support.left = std::clamp((1.0 - s) * a.support.left + s * b.support.left, 0.0, 1.0);
  out.support.right = std::clamp((1.0 - s) * a.support.right + s * b.support.right, 0.0, 1.0);
  return out;
}

std::vector<double> play_times(const Motion& m, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("play dt must be > 0");
  const double duration = m.duration();
  std::vector<double> ts;
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (t >= duration - kTimeEps * dt) break;
    ts.push_back(t);
  }
  ts.push_back(duration);
  return ts;
}

std::vector<FrameCommand> play(const Motion& m, double dt) {
  std::vector<FrameCommand> out;
  for (double t : play_times(m, dt)) out.push_back(sample(m, t));
  return out;
}

MotionPlayer::MotionPlayer(Motion m) : motion_(std::move(m)) {
  if (motion_.keyframes.size() < 2) throw std::invalid_argument("motion has fewer than two keyframes");
}

FrameCommand MotionPlayer::step(double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("player dt must be > 0");
  const double duration = motion_.duration();
  if (finished_) return sample(motion_, duration);
  if (!motion_.loop && t_ >= duration - kTimeEps * dt) {
    finished_ = true;
    return sample(motion_, duration);
  }
  const FrameCommand out = sample(motion_, t_);
  t_ += dt;
  if (motion_.loop) {
    if (t_ >= duration) t_ -= duration;
  } else {
    t_ = std::min(t_, duration);
  }
  return out;
}

json to_json(const MotionViolation& v) {
  return {{"kind", v.kind}, {"keyframe", v.keyframe}, {"joint", v.joint},
          {"t", v.t},       {"value", v.value},       {"bound", v.bound}};
}

std::vector<MotionViolation> validate_against_model(const Motion& m, const RobotModel& model,
                                                    const MotionCheckOptions& opt) {
  std::vector<MotionViolation> out;
  if (model.num_joints() != kNumJoints) {
    out.push_back({"joints", -1, "", 0.0, static_cast<double>(model.num_joints()), double(kNumJoints)});
    return out;
  }
  const VecX lo = model.lower_limits(), hi = model.upper_limits();
  for (std::size_t i = 0; i < m.keyframes.size(); ++i) {
    const Keyframe& k = m.keyframes[i];
    for (int j = 0; j < kNumJoints; ++j) {
      if (k.pos[j] < lo[j] || k.pos[j] > hi[j]) {
        out.push_back({"limit", int(i), kJointNames[j], k.t, k.pos[j], k.pos[j] < lo[j] ? lo[j] : hi[j]});
      }
      if (std::abs(k.vel[j]) > opt.max_velocity) {
        out.push_back({"velocity", int(i), kJointNames[j], k.t, k.vel[j], opt.max_velocity});
      }
    }
  }

  // Stream checks at the control rate; first occurrence per kind and joint.
  const double dt = 1.0 / opt.control_rate;
  const std::vector<double> ts = play_times(m, dt);
  std::vector<FrameCommand> frames;
  for (double t : ts) frames.push_back(sample(m, t));
  std::map<std::pair<std::string, int>, bool> reported;
  auto report = [&](const char* kind, int j, double t, double value, double bound) {
    if (reported[{kind, j}]) return;
    reported[{kind, j}] = true;
    out.push_back({kind, -1, kJointNames[j], t, value, bound});
  };
  VecX prev_fd = VecX::Zero(kNumJoints);
  for (std::size_t n = 1; n < frames.size(); ++n) {
    const double h = ts[n] - ts[n - 1];
    const VecX step = frames[n].pos - frames[n - 1].pos;
    const VecX fd = step / h;
    for (int j = 0; j < kNumJoints; ++j) {
      if (frames[n].pos[j] < lo[j] - 1e-12 || frames[n].pos[j] > hi[j] + 1e-12) {
        report("limit", j, ts[n], frames[n].pos[j], frames[n].pos[j] < lo[j] ? lo[j] : hi[j]);
      }
      if (std::abs(frames[n].vel[j]) > opt.max_velocity) {
        report("velocity", j, ts[n], frames[n].vel[j], opt.max_velocity);
      }
      if (std::abs(step[j]) > opt.max_step) report("step", j, ts[n], step[j], opt.max_step);
      if (n >= 2 && std::abs(fd[j] - prev_fd[j]) > opt.max_velocity_jump) {
        report("velocity_jump", j, ts[n], fd[j] - prev_fd[j], opt.max_velocity_jump);
      }
    }
    prev_fd = fd;
  }
  return out;
}

}  // namespace hop
