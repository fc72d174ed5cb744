// Kinematic tree of the humanoid, forward kinematics, and the three gait pose
// spaces (joint, abstract, inverse).
#pragma once

#include "hop/orientation.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hop {

using VecX = Eigen::VectorXd;

inline constexpr int kNumJoints = 20;

/// Canonical joint order of the humanoid model.
enum JointId : int {
  kHeadYaw = 0,
  kHeadPitch,
  kLeftShoulderPitch,
  kLeftShoulderRoll,
  kLeftElbowPitch,
  kRightShoulderPitch,
  kRightShoulderRoll,
  kRightElbowPitch,
  kLeftHipYaw,
  kLeftHipRoll,
  kLeftHipPitch,
  kLeftKneePitch,
  kLeftAnklePitch,
  kLeftAnkleRoll,
  kRightHipYaw,
  kRightHipRoll,
  kRightHipPitch,
  kRightKneePitch,
  kRightAnklePitch,
  kRightAnkleRoll,
};

extern const std::array<const char*, kNumJoints> kJointNames;

enum class Side { left, right };

inline int leg_base(Side s) { return s == Side::left ? kLeftHipYaw : kRightHipYaw; }
inline int arm_base(Side s) { return s == Side::left ? kLeftShoulderPitch : kRightShoulderPitch; }

class ModelError : public std::runtime_error {
 public:
  enum class Kind { schema, structure, symmetry, mass, inertia };
  ModelError(Kind kind, std::string path, const std::string& what);

  Kind kind() const { return kind_; }
  const std::string& path() const { return path_; }

 private:
  Kind kind_;
  std::string path_;
};

const char* to_string(ModelError::Kind k);

struct ServoSpec {
  std::string type = "MX-106";
  int id = 1;
  double stiffness = 12.0;        // N*m/rad at maximum gain
  double max_p_gain = 32.0;       // raw register units
  int ticks_per_rev = 4096;
  double torque_limit = 8.4;      // N*m
  double viscous_friction = 1.0;  // N*m*s/rad
  double rotor_inertia = 0.005;   // kg*m^2
};

struct Joint {
  std::string name;
  int parent_link = -1;
  int child_link = -1;
  Vec3 origin = Vec3::Zero();
  Quat origin_rotation = Quat::Identity();
  Vec3 axis = Vec3::UnitZ();
  double lower = 0.0;
  double upper = 0.0;
  ServoSpec servo;
};

struct Link {
  std::string name;
  int parent_joint = -1;  // -1 for the root
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about the COM, link frame
};

/// Fixed frame attached to a link (camera, soles, hands).
struct Frame {
  std::string name;
  int parent_link = -1;
  Vec3 origin = Vec3::Zero();
  Quat rotation = Quat::Identity();
};

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat rotation = Quat::Identity();

  Pose operator*(const Pose& rhs) const {
    return {position + rotation * rhs.position, normalized(rotation * rhs.rotation)};
  }
  Vec3 apply(const Vec3& p) const { return position + rotation * p; }
  Pose inverse() const {
    const Quat r = rotation.conjugate();
    return {-(r * position), r};
  }
};

/// Leg dimensions extracted from the model (trunk frame).
struct LegGeometry {
  Vec3 hip = Vec3::Zero();  // hip joint centre
  double thigh = 0.0;
  double shank = 0.0;
  double ankle = 0.0;  // ankle centre to sole
};

struct ArmGeometry {
  Vec3 shoulder = Vec3::Zero();
  double upper_arm = 0.0;
  double forearm = 0.0;
};

enum class Validation { humanoid, generic };

class RobotModel {
 public:
  /// Parses and validates a model document.
  static RobotModel from_json(const nlohmann::json& doc, Validation v = Validation::humanoid);

  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<Link>& links() const { return links_; }
  const std::vector<Frame>& frames() const { return frames_; }
  int num_joints() const { return static_cast<int>(joints_.size()); }
  int root_link() const { return 0; }

  std::optional<int> joint_index(const std::string& name) const;
  std::optional<int> link_index(const std::string& name) const;
  std::optional<int> frame_index(const std::string& name) const;
  /// Throws std::out_of_range for unknown names.
  int require_link(const std::string& name) const;

  double total_mass() const;
  double k_max() const { return k_max_; }
  double elbow_max() const { return elbow_max_; }
  bool is_humanoid() const { return humanoid_; }
  const LegGeometry& leg(Side s) const;
  const ArmGeometry& arm(Side s) const;
  /// Trunk origin height above the soles at the zero pose.
  double standing_height() const;

  VecX lower_limits() const;
  VecX upper_limits() const;
  /// Clamps q into the joint limits; returns true if anything changed.
  bool clamp_to_limits(VecX& q) const;

  const nlohmann::json& document() const { return doc_; }

 private:
  std::vector<Joint> joints_;
  std::vector<Link> links_;
  std::vector<Frame> frames_;
  std::map<std::string, int> joint_by_name_, link_by_name_, frame_by_name_;
  double k_max_ = 2.0944;
  double elbow_max_ = 2.0944;
  bool humanoid_ = false;
  std::array<LegGeometry, 2> legs_{};
  std::array<ArmGeometry, 2> arms_{};
  nlohmann::json doc_;

  void validate_humanoid();
};

/// Reads a JSON model file. Throws ModelError (schema) on I/O or parse errors.
RobotModel load_model(const std::string& path);

/// Link poses, indexed like model.links(), then frames appended in order.
struct KinematicState {
  std::vector<Pose> links;
  std::vector<Pose> frames;
};

KinematicState link_poses(const RobotModel& model, const VecX& q);

/// Link and frame poses in the trunk frame, keyed by name.
std::map<std::string, Pose> forward_kinematics(const RobotModel& model, const VecX& q);

/// Joint-space mirror: swaps sides and negates roll/yaw joints.
VecX mirror_joints(const VecX& q);

// ---------------------------------------------------------------------------
// Abstract space

struct AbstractLegPose {
  double extension = 0.0;  // [0, 1]
  double angle_x = 0.0;
  double angle_y = 0.0;
  double angle_z = 0.0;
  double foot_angle_x = 0.0;
  double foot_angle_y = 0.0;

  bool operator==(const AbstractLegPose&) const = default;
};

struct AbstractArmPose {
  double extension = 0.0;  // [0, 1]
  double angle_x = 0.0;
  double angle_y = 0.0;

  bool operator==(const AbstractArmPose&) const = default;
};

/// Mirrors a pose to the opposite side (negates x and z angles).
AbstractLegPose mirrored(const AbstractLegPose& p);
AbstractArmPose mirrored(const AbstractArmPose& p);

using LegJoints = std::array<double, 6>;  // hip yaw, hip roll, hip pitch, knee, ankle pitch, ankle roll
using ArmJoints = std::array<double, 3>;  // shoulder pitch, shoulder roll, elbow pitch

class PoseSpaceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Knee angle for a leg extension: 2*acos(1 - ext*(1 - cos(k_max/2))),
/// evaluated in the half-angle form 4*asin(sqrt(ext)*sin(k_max/4)).
double knee_from_extension(double extension, double k_max);
double extension_from_knee(double knee, double k_max);

LegJoints abstract_to_joint_leg(const AbstractLegPose& a, Side side, double k_max);
AbstractLegPose joint_to_abstract_leg(const LegJoints& q, Side side, double k_max);
ArmJoints abstract_to_joint_arm(const AbstractArmPose& a, Side side, double elbow_max);
AbstractArmPose joint_to_abstract_arm(const ArmJoints& q, Side side, double elbow_max);

// ---------------------------------------------------------------------------
// Inverse space

/// Sole pose relative to the trunk frame.
struct InverseLegPose {
  Vec3 foot_position = Vec3::Zero();
  Quat foot_rotation = Quat::Identity();
};

class UnreachableError : public std::domain_error {
 public:
  UnreachableError(const std::string& what, InverseLegPose closest)
      : std::domain_error(what), closest_(closest) {}
  const InverseLegPose& closest_reachable() const { return closest_; }

 private:
  InverseLegPose closest_;
};

/// Analytic leg IK, knee >= 0 branch. Throws UnreachableError.
LegJoints inverse_to_joint_leg(const InverseLegPose& p, const RobotModel& model, Side side);
InverseLegPose joint_to_inverse_leg(const LegJoints& q, const RobotModel& model, Side side);

LegJoints leg_joints(const VecX& q, Side side);
void set_leg_joints(VecX& q, Side side, const LegJoints& leg);
ArmJoints arm_joints(const VecX& q, Side side);
void set_arm_joints(VecX& q, Side side, const ArmJoints& arm);

}  // namespace hop
