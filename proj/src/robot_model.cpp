#include "hop/robot_model.hpp"

#include "json_read.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

namespace hop {

using nlohmann::json;
using detail::SchemaViolation;

const std::array<const char*, kNumJoints> kJointNames = {
    "head_yaw",           "head_pitch",          "left_shoulder_pitch", "left_shoulder_roll",
    "left_elbow_pitch",   "right_shoulder_pitch", "right_shoulder_roll", "right_elbow_pitch",
    "left_hip_yaw",       "left_hip_roll",       "left_hip_pitch",      "left_knee_pitch",
    "left_ankle_pitch",   "left_ankle_roll",     "right_hip_yaw",       "right_hip_roll",
    "right_hip_pitch",    "right_knee_pitch",    "right_ankle_pitch",   "right_ankle_roll",
};

ModelError::ModelError(Kind kind, std::string path, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + " error at '" + path + "': " + what),
      kind_(kind),
      path_(std::move(path)) {}

const char* to_string(ModelError::Kind k) {
  switch (k) {
    case ModelError::Kind::schema: return "schema";
    case ModelError::Kind::structure: return "structure";
    case ModelError::Kind::symmetry: return "symmetry";
    case ModelError::Kind::mass: return "mass";
    case ModelError::Kind::inertia: return "inertia";
  }
  return "unknown";
}

namespace {

constexpr double kSymTol = 1e-12;

Quat rpy_quat(const Vec3& rpy) { return normalized(rot_z(rpy.z()) * rot_y(rpy.y()) * rot_x(rpy.x())); }

Quat rotation_about(const Vec3& axis, double angle) {
  const double s = std::sin(0.5 * angle);
  return Quat(std::cos(0.5 * angle), s * axis.x(), s * axis.y(), s * axis.z());
}

bool is_roll_or_yaw(int j) {
  switch (j) {
    case kHeadYaw:
    case kLeftShoulderRoll:
    case kRightShoulderRoll:
    case kLeftHipYaw:
    case kRightHipYaw:
    case kLeftHipRoll:
    case kRightHipRoll:
    case kLeftAnkleRoll:
    case kRightAnkleRoll: return true;
    default: return false;
  }
}

std::string mirror_name(const std::string& n) {
  if (n.rfind("left_", 0) == 0) return "right_" + n.substr(5);
  if (n.rfind("right_", 0) == 0) return "left_" + n.substr(6);
  return n;
}

}  // namespace

RobotModel RobotModel::from_json(const json& doc, Validation validation) {
  RobotModel m;
  m.doc_ = doc;
  try {
    if (!doc.is_object()) throw SchemaViolation("", "model document must be an object");
    if (doc.contains("k_max")) m.k_max_ = detail::number_field(doc, "k_max", "");
    if (doc.contains("elbow_max")) m.elbow_max_ = detail::number_field(doc, "elbow_max", "");

    const auto& jlinks = detail::array_field(doc, "links", "");
    for (std::size_t i = 0; i < jlinks.size(); ++i) {
      const std::string p = detail::index_path("links", i);
      Link l;
      l.name = detail::string_field(jlinks[i], "name", p);
      l.mass = detail::number_field(jlinks[i], "mass", p);
      l.com = detail::vec3_field(jlinks[i], "com", p);
      const auto in = detail::numbers(detail::member(jlinks[i], "inertia", p), p + ".inertia", 6);
      // ixx, iyy, izz, ixy, ixz, iyz
      l.inertia << in[0], in[3], in[4], in[3], in[1], in[5], in[4], in[5], in[2];
      if (m.link_by_name_.count(l.name)) {
        throw ModelError(ModelError::Kind::structure, p + ".name", "duplicate link '" + l.name + "'");
      }
      m.link_by_name_[l.name] = static_cast<int>(m.links_.size());
      m.links_.push_back(l);
    }
    if (m.links_.empty()) throw ModelError(ModelError::Kind::structure, "links", "model has no links");

    std::string root = m.links_.front().name;
    if (doc.contains("root")) root = detail::string_field(doc, "root", "");
    if (!m.link_by_name_.count(root)) {
      throw ModelError(ModelError::Kind::structure, "root", "unknown root link '" + root + "'");
    }
    // Root goes first.
    const int root_idx = m.link_by_name_[root];
    if (root_idx != 0) {
      std::rotate(m.links_.begin(), m.links_.begin() + root_idx, m.links_.begin() + root_idx + 1);
      m.link_by_name_.clear();
      for (std::size_t i = 0; i < m.links_.size(); ++i) m.link_by_name_[m.links_[i].name] = static_cast<int>(i);
    }

    for (std::size_t i = 0; i < jlinks.size(); ++i) {
      const std::string p = detail::index_path("links", i);
      const Link& l = m.links_[m.link_by_name_.at(jlinks[i]["name"].get<std::string>())];
      if (!(l.mass > 0.0)) throw ModelError(ModelError::Kind::mass, p + ".mass", "mass must be positive");
      if ((l.inertia - l.inertia.transpose()).norm() > 0.0) {
        throw ModelError(ModelError::Kind::inertia, p + ".inertia", "inertia must be symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Mat3> es(l.inertia);
      if (es.eigenvalues().minCoeff() <= 1e-12) {
        throw ModelError(ModelError::Kind::inertia, p + ".inertia", "inertia tensor is singular or indefinite");
      }
    }

    const auto& jjoints = detail::array_field(doc, "joints", "");
    for (std::size_t i = 0; i < jjoints.size(); ++i) {
      const std::string p = detail::index_path("joints", i);
      const json& jj = jjoints[i];
      Joint j;
      j.name = detail::string_field(jj, "name", p);
      const std::string parent = detail::string_field(jj, "parent", p);
      const std::string child = detail::string_field(jj, "child", p);
      j.origin = detail::vec3_field(jj, "origin_xyz", p);
      if (jj.contains("origin_rpy")) j.origin_rotation = rpy_quat(detail::vec3_field(jj, "origin_rpy", p));
      j.axis = detail::vec3_field(jj, "axis", p);
      if (!(j.axis.norm() > 0.0)) throw SchemaViolation(p + ".axis", "joint axis must be non-zero");
      j.axis.normalize();
      const auto lim = detail::numbers(detail::member(jj, "limits", p), p + ".limits", 2);
      j.lower = lim[0];
      j.upper = lim[1];
      if (!(j.lower <= j.upper)) throw SchemaViolation(p + ".limits", "joint limits must satisfy lower <= upper");

      const json& js = detail::member(jj, "servo", p);
      const std::string sp = p + ".servo";
      j.servo.type = detail::string_field(js, "type", sp);
      j.servo.stiffness = detail::number_field(js, "stiffness", sp);
      j.servo.max_p_gain = detail::number_field(js, "max_p_gain", sp);
      j.servo.ticks_per_rev = static_cast<int>(detail::number_field(js, "ticks_per_rev", sp));
      if (js.contains("id")) j.servo.id = static_cast<int>(detail::number_field(js, "id", sp));
      else j.servo.id = static_cast<int>(i) + 1;
      if (js.contains("torque_limit")) j.servo.torque_limit = detail::number_field(js, "torque_limit", sp);
      if (js.contains("viscous_friction")) j.servo.viscous_friction = detail::number_field(js, "viscous_friction", sp);
      if (js.contains("rotor_inertia")) j.servo.rotor_inertia = detail::number_field(js, "rotor_inertia", sp);
      if (!(j.servo.stiffness > 0.0) || !(j.servo.max_p_gain > 0.0) || j.servo.ticks_per_rev <= 0 ||
          !(j.servo.torque_limit > 0.0) || !(j.servo.viscous_friction >= 0.0) || !(j.servo.rotor_inertia > 0.0)) {
        throw SchemaViolation(sp, "servo parameters must be positive");
      }

      auto pit = m.link_by_name_.find(parent);
      auto cit = m.link_by_name_.find(child);
      if (pit == m.link_by_name_.end()) {
        throw ModelError(ModelError::Kind::structure, p + ".parent", "unknown link '" + parent + "'");
      }
      if (cit == m.link_by_name_.end()) {
        throw ModelError(ModelError::Kind::structure, p + ".child", "unknown link '" + child + "'");
      }
      j.parent_link = pit->second;
      j.child_link = cit->second;
      if (j.child_link == 0) throw ModelError(ModelError::Kind::structure, p + ".child", "root link cannot be a child");
      if (m.links_[j.child_link].parent_joint >= 0) {
        throw ModelError(ModelError::Kind::structure, p + ".child", "link '" + child + "' has two parent joints");
      }
      if (m.joint_by_name_.count(j.name)) {
        throw ModelError(ModelError::Kind::structure, p + ".name", "duplicate joint '" + j.name + "'");
      }
      m.links_[j.child_link].parent_joint = static_cast<int>(m.joints_.size());
      m.joint_by_name_[j.name] = static_cast<int>(m.joints_.size());
      m.joints_.push_back(j);
    }

    // Connectivity and topological order: every joint's parent must precede it.
    std::vector<bool> reached(m.links_.size(), false);
    reached[0] = true;
    for (std::size_t i = 0; i < m.joints_.size(); ++i) {
      const Joint& j = m.joints_[i];
      if (!reached[j.parent_link]) {
        throw ModelError(ModelError::Kind::structure, detail::index_path("joints", i) + ".parent",
                         "parent link '" + m.links_[j.parent_link].name + "' is not attached before joint '" +
                             j.name + "'");
      }
      reached[j.child_link] = true;
    }
    for (std::size_t i = 0; i < m.links_.size(); ++i) {
      if (!reached[i]) {
        throw ModelError(ModelError::Kind::structure, "links." + m.links_[i].name,
                         "link is not connected to the root");
      }
    }

    if (doc.contains("frames")) {
      const auto& jframes = detail::array_field(doc, "frames", "");
      for (std::size_t i = 0; i < jframes.size(); ++i) {
        const std::string p = detail::index_path("frames", i);
        Frame f;
        f.name = detail::string_field(jframes[i], "name", p);
        const std::string parent = detail::string_field(jframes[i], "parent", p);
        auto it = m.link_by_name_.find(parent);
        if (it == m.link_by_name_.end()) {
          throw ModelError(ModelError::Kind::structure, p + ".parent", "unknown link '" + parent + "'");
        }
        f.parent_link = it->second;
        f.origin = detail::vec3_field(jframes[i], "origin_xyz", p);
        if (jframes[i].contains("origin_rpy")) f.rotation = rpy_quat(detail::vec3_field(jframes[i], "origin_rpy", p));
        m.frame_by_name_[f.name] = static_cast<int>(m.frames_.size());
        m.frames_.push_back(f);
      }
    }
  } catch (const SchemaViolation& e) {
    throw ModelError(ModelError::Kind::schema, e.path, e.what());
  } catch (const json::exception& e) {
    throw ModelError(ModelError::Kind::schema, "", e.what());
  }

  if (validation == Validation::humanoid) m.validate_humanoid();
  return m;
}

void RobotModel::validate_humanoid() {
  using K = ModelError::Kind;
  if (num_joints() != kNumJoints) {
    for (const char* n : kJointNames) {
      if (!joint_by_name_.count(n)) throw ModelError(K::structure, std::string("joints.") + n, "missing joint");
    }
    throw ModelError(K::structure, "joints", "expected exactly 20 joints");
  }
  for (int i = 0; i < kNumJoints; ++i) {
    if (joints_[i].name != kJointNames[i]) {
      if (!joint_by_name_.count(kJointNames[i])) {
        throw ModelError(K::structure, std::string("joints.") + kJointNames[i], "missing joint");
      }
      throw ModelError(K::structure, detail::index_path("joints", i),
                       std::string("expected joint '") + kJointNames[i] + "' at this position");
    }
  }
  for (const char* f : {"camera", "left_sole", "right_sole", "left_hand", "right_hand"}) {
    if (!frame_by_name_.count(f)) throw ModelError(K::structure, std::string("frames.") + f, "missing frame");
  }

  const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
  auto expect_axis = [&](int j, const Vec3& a) {
    if ((joints_[j].axis - a).norm() > kSymTol || !joints_[j].origin_rotation.isApprox(Quat::Identity(), 1e-15)) {
      throw ModelError(K::structure, "joints." + joints_[j].name + ".axis", "unexpected joint axis");
    }
  };
  auto expect_zero_offset = [&](int j) {
    if (joints_[j].origin.norm() > kSymTol) {
      throw ModelError(K::structure, "joints." + joints_[j].name + ".origin_xyz", "expected coincident joint axes");
    }
  };
  auto expect_vertical = [&](const Vec3& o, const std::string& path) {
    if (std::abs(o.x()) > kSymTol || std::abs(o.y()) > kSymTol || !(o.z() < 0.0)) {
      throw ModelError(K::structure, path, "expected a purely downward offset");
    }
  };

  for (Side s : {Side::left, Side::right}) {
    const int b = leg_base(s);
    expect_axis(b + 0, ez);
    expect_axis(b + 1, ex);
    expect_axis(b + 2, ey);
    expect_axis(b + 3, ey);
    expect_axis(b + 4, ey);
    expect_axis(b + 5, ex);
    expect_zero_offset(b + 1);
    expect_zero_offset(b + 2);
    expect_zero_offset(b + 5);
    expect_vertical(joints_[b + 3].origin, "joints." + joints_[b + 3].name + ".origin_xyz");
    expect_vertical(joints_[b + 4].origin, "joints." + joints_[b + 4].name + ".origin_xyz");
    for (int k = 1; k < 6; ++k) {
      if (joints_[b + k].parent_link != joints_[b + k - 1].child_link) {
        throw ModelError(K::structure, "joints." + joints_[b + k].name + ".parent", "leg chain is not serial");
      }
    }
    if (joints_[b].parent_link != 0) {
      throw ModelError(K::structure, "joints." + joints_[b].name + ".parent", "leg must attach to the trunk");
    }
    const std::string prefix = s == Side::left ? "left_" : "right_";
    const Frame& sole = frames_[frame_by_name_.at(prefix + "sole")];
    if (sole.parent_link != joints_[b + 5].child_link) {
      throw ModelError(K::structure, "frames." + prefix + "sole.parent", "sole must attach to the foot link");
    }
    expect_vertical(sole.origin, "frames." + prefix + "sole.origin_xyz");

    LegGeometry& g = legs_[s == Side::left ? 0 : 1];
    g.hip = joints_[b].origin;
    g.thigh = -joints_[b + 3].origin.z();
    g.shank = -joints_[b + 4].origin.z();
    g.ankle = -sole.origin.z();

    const int a = arm_base(s);
    expect_axis(a + 0, ey);
    expect_axis(a + 1, ex);
    expect_axis(a + 2, ey);
    expect_zero_offset(a + 1);
    expect_vertical(joints_[a + 2].origin, "joints." + joints_[a + 2].name + ".origin_xyz");
    const Frame& hand = frames_[frame_by_name_.at(prefix + "hand")];
    if (hand.parent_link != joints_[a + 2].child_link) {
      throw ModelError(K::structure, "frames." + prefix + "hand.parent", "hand must attach to the forearm link");
    }
    expect_vertical(hand.origin, "frames." + prefix + "hand.origin_xyz");
    ArmGeometry& ag = arms_[s == Side::left ? 0 : 1];
    ag.shoulder = joints_[a].origin;
    ag.upper_arm = -joints_[a + 2].origin.z();
    ag.forearm = -hand.origin.z();
  }

  // Mirror symmetry of left/right chains.
  auto sym_err = [&](const std::string& path, const std::string& what) {
    throw ModelError(K::symmetry, path, what);
  };
  auto mirrored_vec = [](const Vec3& v) { return Vec3(v.x(), -v.y(), v.z()); };
  for (int i = 0; i < kNumJoints; ++i) {
    const Joint& jl = joints_[i];
    if (jl.name.rfind("left_", 0) != 0) continue;
    const Joint& jr = joints_[joint_by_name_.at(mirror_name(jl.name))];
    if ((jr.origin - mirrored_vec(jl.origin)).cwiseAbs().maxCoeff() > kSymTol) {
      sym_err("joints." + jr.name + ".origin_xyz", "origin is not the mirror image of '" + jl.name + "'");
    }
    const bool flip = is_roll_or_yaw(i);
    const double lo = flip ? -jl.upper : jl.lower;
    const double hi = flip ? -jl.lower : jl.upper;
    if (std::abs(jr.lower - lo) > kSymTol || std::abs(jr.upper - hi) > kSymTol) {
      sym_err("joints." + jr.name + ".limits", "limits are not the mirror image of '" + jl.name + "'");
    }
    const Link& ll = links_[jl.child_link];
    const Link& lr = links_[jr.child_link];
    if (lr.name != mirror_name(ll.name)) {
      sym_err("links." + lr.name, "child link naming is not mirrored");
    }
    Mat3 mi = ll.inertia;
    mi(0, 1) = mi(1, 0) = -mi(0, 1);
    mi(1, 2) = mi(2, 1) = -mi(1, 2);
    if (std::abs(lr.mass - ll.mass) > kSymTol || (lr.com - mirrored_vec(ll.com)).cwiseAbs().maxCoeff() > kSymTol ||
        (lr.inertia - mi).cwiseAbs().maxCoeff() > kSymTol) {
      sym_err("links." + lr.name, "mass properties are not the mirror image of '" + ll.name + "'");
    }
  }
  const LegGeometry& L = legs_[0];
  const LegGeometry& R = legs_[1];
  if (std::abs(L.thigh - R.thigh) > kSymTol || std::abs(L.shank - R.shank) > kSymTol ||
      std::abs(L.ankle - R.ankle) > kSymTol) {
    sym_err("frames.right_sole", "leg segment lengths differ between sides");
  }
  for (const char* f : {"left_sole", "left_hand"}) {
    const Frame& fl = frames_[frame_by_name_.at(f)];
    const Frame& fr = frames_[frame_by_name_.at(mirror_name(f))];
    if ((fr.origin - mirrored_vec(fl.origin)).cwiseAbs().maxCoeff() > kSymTol) {
      sym_err("frames." + fr.name + ".origin_xyz", "frame is not the mirror image of '" + fl.name + "'");
    }
  }
  humanoid_ = true;
}

std::optional<int> RobotModel::joint_index(const std::string& name) const {
  auto it = joint_by_name_.find(name);
  if (it == joint_by_name_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> RobotModel::link_index(const std::string& name) const {
  auto it = link_by_name_.find(name);
  if (it == link_by_name_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> RobotModel::frame_index(const std::string& name) const {
  auto it = frame_by_name_.find(name);
  if (it == frame_by_name_.end()) return std::nullopt;
  return it->second;
}

int RobotModel::require_link(const std::string& name) const {
  auto idx = link_index(name);
  if (!idx) throw std::out_of_range("unknown link '" + name + "'");
  return *idx;
}

double RobotModel::total_mass() const {
  double m = 0.0;
  for (const auto& l : links_) m += l.mass;
  return m;
}

const LegGeometry& RobotModel::leg(Side s) const {
  if (!humanoid_) throw std::logic_error("leg geometry requires a humanoid model");
  return legs_[s == Side::left ? 0 : 1];
}

const ArmGeometry& RobotModel::arm(Side s) const {
  if (!humanoid_) throw std::logic_error("arm geometry requires a humanoid model");
  return arms_[s == Side::left ? 0 : 1];
}

double RobotModel::standing_height() const {
  const LegGeometry& g = leg(Side::left);
  return -g.hip.z() + g.thigh + g.shank + g.ankle;
}

VecX RobotModel::lower_limits() const {
  VecX v(num_joints());
  for (int i = 0; i < num_joints(); ++i) v[i] = joints_[i].lower;
  return v;
}

VecX RobotModel::upper_limits() const {
  VecX v(num_joints());
  for (int i = 0; i < num_joints(); ++i) v[i] = joints_[i].upper;
  return v;
}

bool RobotModel::clamp_to_limits(VecX& q) const {
  bool changed = false;
  for (int i = 0; i < num_joints(); ++i) {
    const double c = std::clamp(q[i], joints_[i].lower, joints_[i].upper);
    if (c != q[i]) {
      q[i] = c;
      changed = true;
    }
  }
  return changed;
}

RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError(ModelError::Kind::schema, path, "cannot open model file");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ModelError(ModelError::Kind::schema, path, e.what());
  }
  return RobotModel::from_json(doc, Validation::humanoid);
}

KinematicState link_poses(const RobotModel& model, const VecX& q) {
  if (q.size() != model.num_joints()) throw std::invalid_argument("joint vector has the wrong size");
  KinematicState ks;
  ks.links.assign(model.links().size(), Pose{});
  for (int i = 0; i < model.num_joints(); ++i) {
    const Joint& j = model.joints()[i];
    const Pose& parent = ks.links[j.parent_link];
    const Pose local{j.origin, normalized(j.origin_rotation * rotation_about(j.axis, q[i]))};
    ks.links[j.child_link] = parent * local;
  }
  ks.frames.reserve(model.frames().size());
  for (const Frame& f : model.frames()) ks.frames.push_back(ks.links[f.parent_link] * Pose{f.origin, f.rotation});
  return ks;
}

std::map<std::string, Pose> forward_kinematics(const RobotModel& model, const VecX& q) {
  const KinematicState ks = link_poses(model, q);
  std::map<std::string, Pose> out;
  for (std::size_t i = 0; i < model.links().size(); ++i) out[model.links()[i].name] = ks.links[i];
  for (std::size_t i = 0; i < model.frames().size(); ++i) out[model.frames()[i].name] = ks.frames[i];
  return out;
}

VecX mirror_joints(const VecX& q) {
  if (q.size() != kNumJoints) throw std::invalid_argument("mirror_joints expects 20 joints");
  VecX m(kNumJoints);
  for (int i = 0; i < kNumJoints; ++i) {
    int src = i;
    if (i >= kLeftShoulderPitch && i <= kRightElbowPitch) {
      src = i < kRightShoulderPitch ? i + 3 : i - 3;
    } else if (i >= kLeftHipYaw) {
      src = i < kRightHipYaw ? i + 6 : i - 6;
    }
    m[i] = is_roll_or_yaw(i) ? -q[src] : q[src];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Abstract space

AbstractLegPose mirrored(const AbstractLegPose& p) {
  AbstractLegPose m = p;
  m.angle_x = -p.angle_x;
  m.angle_z = -p.angle_z;
  m.foot_angle_x = -p.foot_angle_x;
  return m;
}

AbstractArmPose mirrored(const AbstractArmPose& p) {
  AbstractArmPose m = p;
  m.angle_x = -p.angle_x;
  return m;
}

double knee_from_extension(double extension, double k_max) {
  if (!(extension >= 0.0 && extension <= 1.0)) {
    throw PoseSpaceError("limb extension must lie in [0, 1]");
  }
  return std::min(k_max, 4.0 * std::asin(std::sqrt(extension) * std::sin(0.25 * k_max)));
}

double extension_from_knee(double knee, double k_max) {
  if (!(knee >= 0.0 && knee <= k_max)) throw PoseSpaceError("knee angle outside [0, k_max]");
  const double r = std::sin(0.25 * knee) / std::sin(0.25 * k_max);
  return std::min(1.0, r * r);
}

// Composition (identical for both sides, since the leg axes are shared and
// the sides are related by mirroring the abstract pose):
//   hip_yaw = angle_z, hip_roll = angle_x, hip_pitch = angle_y - knee/2,
//   knee = knee(extension), ankle_pitch = foot_angle_y - angle_y - knee/2,
//   ankle_roll = foot_angle_x - angle_x.
LegJoints abstract_to_joint_leg(const AbstractLegPose& a, Side, double k_max) {
  const double knee = knee_from_extension(a.extension, k_max);
  return {a.angle_z, a.angle_x, a.angle_y - 0.5 * knee, knee, a.foot_angle_y - a.angle_y - 0.5 * knee,
          a.foot_angle_x - a.angle_x};
}

AbstractLegPose joint_to_abstract_leg(const LegJoints& q, Side, double k_max) {
  AbstractLegPose a;
  const double knee = q[3];
  a.extension = extension_from_knee(knee, k_max);
  a.angle_z = q[0];
  a.angle_x = q[1];
  a.angle_y = q[2] + 0.5 * knee;
  a.foot_angle_y = q[4] + a.angle_y + 0.5 * knee;
  a.foot_angle_x = q[5] + a.angle_x;
  return a;
}

// shoulder_pitch = angle_y - elbow/2, shoulder_roll = angle_x, elbow = -bend(extension).
ArmJoints abstract_to_joint_arm(const AbstractArmPose& a, Side, double elbow_max) {
  const double elbow = -knee_from_extension(a.extension, elbow_max);
  return {a.angle_y - 0.5 * elbow, a.angle_x, elbow};
}

AbstractArmPose joint_to_abstract_arm(const ArmJoints& q, Side, double elbow_max) {
  AbstractArmPose a;
  a.extension = extension_from_knee(-q[2], elbow_max);
  a.angle_x = q[1];
  a.angle_y = q[0] + 0.5 * q[2];
  return a;
}

// ---------------------------------------------------------------------------
// Inverse space

InverseLegPose joint_to_inverse_leg(const LegJoints& q, const RobotModel& model, Side side) {
  const LegGeometry& g = model.leg(side);
  const Quat hip = rot_z(q[0]) * rot_x(q[1]) * rot_y(q[2]);
  const Quat knee = hip * rot_y(q[3]);
  const Quat foot = normalized(knee * rot_y(q[4]) * rot_x(q[5]));
  InverseLegPose p;
  p.foot_position = g.hip + hip * Vec3(0, 0, -g.thigh) + knee * Vec3(0, 0, -g.shank) + foot * Vec3(0, 0, -g.ankle);
  p.foot_rotation = foot;
  return p;
}

LegJoints inverse_to_joint_leg(const InverseLegPose& p, const RobotModel& model, Side side) {
  const LegGeometry& g = model.leg(side);
  const Joint& knee_joint = model.joints()[leg_base(side) + 3];
  const double L1 = g.thigh, L2 = g.shank;
  const Quat rf = normalized(p.foot_rotation);
  const Mat3 RF = rf.toRotationMatrix();

  const Vec3 ankle = p.foot_position + RF * Vec3(0, 0, g.ankle);
  const Vec3 hip_from_ankle = g.hip - ankle;
  const Vec3 v = RF.transpose() * hip_from_ankle;
  const double D = v.norm();

  const double d_max = L1 + L2;
  const double knee_hi = std::max(0.0, knee_joint.upper);
  const double d_min = std::sqrt(std::max(0.0, L1 * L1 + L2 * L2 + 2.0 * L1 * L2 * std::cos(knee_hi)));
  if (D > d_max * (1.0 + 1e-12) || D < d_min || !(v.z() > 0.0)) {
    InverseLegPose closest = p;
    const double target = std::clamp(D, d_min, d_max);
    const Vec3 dir = D > 0.0 ? Vec3(hip_from_ankle / D) : Vec3(RF * Vec3::UnitZ());
    closest.foot_position = g.hip - dir * target - RF * Vec3(0, 0, g.ankle);
    throw UnreachableError("foot target unreachable: hip-ankle distance " + std::to_string(D) + " m outside [" +
                               std::to_string(d_min) + ", " + std::to_string(d_max) + "]",
                           closest);
  }

  // Half-angle form keeps the knee well conditioned near full extension.
  const double s2 = std::clamp((d_max * d_max - D * D) / (4.0 * L1 * L2), 0.0, 1.0);
  const double knee = 2.0 * std::asin(std::sqrt(s2));

  const double ankle_roll = std::atan2(v.y(), v.z());
  const double wz = std::hypot(v.y(), v.z());
  const double ux = -L1 * std::sin(knee);
  const double uz = L1 * std::cos(knee) + L2;
  const double ankle_pitch = std::atan2(ux, uz) - std::atan2(v.x(), wz);

  const Mat3 M = (rf * rot_x(-ankle_roll) * rot_y(-(knee + ankle_pitch))).toRotationMatrix();
  const double hip_roll = std::asin(std::clamp(M(2, 1), -1.0, 1.0));
  const double hip_yaw = std::atan2(-M(0, 1), M(1, 1));
  const double hip_pitch = std::atan2(-M(2, 0), M(2, 2));
  return {hip_yaw, hip_roll, hip_pitch, knee, ankle_pitch, ankle_roll};
}

LegJoints leg_joints(const VecX& q, Side side) {
  const int b = leg_base(side);
  return {q[b], q[b + 1], q[b + 2], q[b + 3], q[b + 4], q[b + 5]};
}

void set_leg_joints(VecX& q, Side side, const LegJoints& leg) {
  const int b = leg_base(side);
  for (int i = 0; i < 6; ++i) q[b + i] = leg[i];
}

ArmJoints arm_joints(const VecX& q, Side side) {
  const int b = arm_base(side);
  return {q[b], q[b + 1], q[b + 2]};
}

void set_arm_joints(VecX& q, Side side, const ArmJoints& arm) {
  const int b = arm_base(side);
  for (int i = 0; i < 3; ++i) q[b + i] = arm[i];
}

}  // namespace hop
