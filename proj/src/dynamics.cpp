#include "hop/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hop {

JointTrajPoint static_point(const VecX& q) {
  return {q, VecX::Zero(q.size()), VecX::Zero(q.size())};
}

EffortVector::EffortVector(VecX v) : e(std::move(v)) { clamp(); }

void EffortVector::clamp() { e = e.cwiseMax(0.0).cwiseMin(1.0); }

namespace {

struct TreeEdge {
  int link = -1;       // link entered
  int from = -1;       // link it is reached from
  int joint = -1;      // connecting joint
  double dir = 1.0;    // +1 when traversed parent -> child
};

/// Breadth-first traversal of the link graph from `base`.
std::vector<TreeEdge> traversal(const RobotModel& model, int base) {
  const int nl = static_cast<int>(model.links().size());
  std::vector<std::vector<TreeEdge>> adj(nl);
  for (int j = 0; j < model.num_joints(); ++j) {
    const Joint& jt = model.joints()[j];
    adj[jt.parent_link].push_back({jt.child_link, jt.parent_link, j, 1.0});
    adj[jt.child_link].push_back({jt.parent_link, jt.child_link, j, -1.0});
  }
  std::vector<TreeEdge> order;
  order.reserve(nl);
  std::vector<bool> seen(nl, false);
  seen[base] = true;
  order.push_back({base, -1, -1, 1.0});
  for (std::size_t head = 0; head < order.size(); ++head) {
    for (const TreeEdge& e : adj[order[head].link]) {
      if (seen[e.link]) continue;
      seen[e.link] = true;
      order.push_back(e);
    }
  }
  return order;
}

}  // namespace

VecX inverse_dynamics_fixed_base(const RobotModel& model, const JointTrajPoint& pt, const Vec3& gravity,
                                 int base_link) {
  const int n = model.num_joints();
  if (pt.q.size() != n || pt.qd.size() != n || pt.qdd.size() != n) {
    throw DynamicsError("trajectory point has the wrong dimension");
  }
  if (!pt.q.allFinite() || !pt.qd.allFinite() || !pt.qdd.allFinite() || !gravity.allFinite()) {
    throw DynamicsError("trajectory point must be finite");
  }
  if (base_link < 0 || base_link >= static_cast<int>(model.links().size())) {
    throw DynamicsError("invalid base link");
  }

  const KinematicState ks = link_poses(model, pt.q);
  const std::vector<TreeEdge> order = traversal(model, base_link);
  const std::size_t nl = model.links().size();

  // Everything is expressed in trunk coordinates; the base is inertially fixed
  // and accelerates upward by -g to account for gravity.
  std::vector<Vec3> omega(nl, Vec3::Zero()), alpha(nl, Vec3::Zero());
  std::vector<Vec3> ref_point(nl, Vec3::Zero()), ref_acc(nl, Vec3::Zero());
  std::vector<Vec3> joint_axis(n), joint_point(n);
  for (int j = 0; j < n; ++j) {
    const Joint& jt = model.joints()[j];
    const Pose& child = ks.links[jt.child_link];
    joint_axis[j] = child.rotation * jt.axis;
    joint_point[j] = child.position;
  }

  ref_point[base_link] = ks.links[base_link].position;
  ref_acc[base_link] = -gravity;

  auto point_acc = [&](int link, const Vec3& x) {
    const Vec3 r = x - ref_point[link];
    return Vec3(ref_acc[link] + alpha[link].cross(r) + omega[link].cross(omega[link].cross(r)));
  };

  for (std::size_t k = 1; k < order.size(); ++k) {
    const TreeEdge& e = order[k];
    const Vec3 a = e.dir * joint_axis[e.joint];
    const double qd = pt.qd[e.joint];
    const double qdd = pt.qdd[e.joint];
    omega[e.link] = omega[e.from] + a * qd;
    alpha[e.link] = alpha[e.from] + a * qdd + omega[e.from].cross(a * qd);
    ref_point[e.link] = joint_point[e.joint];
    ref_acc[e.link] = point_acc(e.from, joint_point[e.joint]);
  }

  // Backward pass: wrench each link receives from the link it was reached from,
  // moments taken about the connecting joint point.
  std::vector<Vec3> force(nl, Vec3::Zero()), moment(nl, Vec3::Zero());
  VecX tau = VecX::Zero(n);
  for (std::size_t k = order.size(); k-- > 1;) {
    const TreeEdge& e = order[k];
    const Link& L = model.links()[e.link];
    const Pose& P = ks.links[e.link];
    const Vec3 com = P.apply(L.com);
    const Mat3 R = P.rotation.toRotationMatrix();
    const Mat3 I = R * L.inertia * R.transpose();
    const Vec3 acc = point_acc(e.link, com);
    const Vec3 w = omega[e.link];

    const Vec3 f_body = L.mass * acc;
    const Vec3 n_body = I * alpha[e.link] + w.cross(I * w);
    const Vec3 o = joint_point[e.joint];
    force[e.link] += f_body;
    moment[e.link] += n_body + (com - o).cross(f_body);

    tau[e.joint] = e.dir * joint_axis[e.joint].dot(moment[e.link]);

    if (e.from != base_link) {
      const Vec3 o_parent = ref_point[e.from];
      force[e.from] += force[e.link];
      moment[e.from] += moment[e.link] + (o - o_parent).cross(force[e.link]);
    }
  }
  return tau;
}

VecX inverse_dynamics(const RobotModel& model, const JointTrajPoint& pt, const Vec3& gravity,
                      const SupportCoefficients& support) {
  const double sl = std::max(0.0, support.left);
  const double sr = std::max(0.0, support.right);
  if (!(sl + sr > 0.0)) throw DynamicsError("support coefficients are both zero");
  if (!model.is_humanoid()) return inverse_dynamics_fixed_base(model, pt, gravity, model.root_link());

  const int left_foot = model.frames()[*model.frame_index("left_sole")].parent_link;
  const int right_foot = model.frames()[*model.frame_index("right_sole")].parent_link;
  if (sr == 0.0) return inverse_dynamics_fixed_base(model, pt, gravity, left_foot);
  if (sl == 0.0) return inverse_dynamics_fixed_base(model, pt, gravity, right_foot);
  const VecX tl = inverse_dynamics_fixed_base(model, pt, gravity, left_foot);
  const VecX tr = inverse_dynamics_fixed_base(model, pt, gravity, right_foot);
  return (sl * tl + sr * tr) / (sl + sr);
}

void ServoParams::validate() const {
  if (!(stiffness > 0.0 && max_p_gain > 0.0 && ticks_per_rev > 0 && torque_limit > 0.0 && viscous_friction >= 0.0 &&
        rotor_inertia > 0.0 && max_gain_step > 0.0)) {
    throw std::invalid_argument("servo parameters must be positive");
  }
}

ServoParams servo_params(const ServoSpec& spec) {
  ServoParams p;
  p.stiffness = spec.stiffness;
  p.max_p_gain = spec.max_p_gain;
  p.ticks_per_rev = spec.ticks_per_rev;
  p.torque_limit = spec.torque_limit;
  p.viscous_friction = spec.viscous_friction;
  p.rotor_inertia = spec.rotor_inertia;
  return p;
}

double torque_to_position_offset(double tau, const ServoParams& params) {
  return std::clamp(tau, -params.torque_limit, params.torque_limit) / params.stiffness;
}

double effective_p_gain(double effort, const ServoParams& params) {
  const double e = std::isfinite(effort) ? std::clamp(effort, 0.0, 1.0) : 0.0;
  return e * params.max_p_gain;
}

double GainSlewLimiter::step(double target, double max_step) {
  current_ += std::clamp(target - current_, -max_step, max_step);
  return current_;
}

namespace {
constexpr double kRadPerTick = 2.0 * std::numbers::pi / kTicksPerRev;
}

int rad_to_ticks(double a) {
  const double t = std::round(a / kRadPerTick) + kTickCenter;
  return static_cast<int>(std::clamp(t, 0.0, static_cast<double>(kTicksPerRev - 1)));
}

double ticks_to_rad(int ticks) { return (ticks - kTickCenter) * kRadPerTick; }

double servo_motor_torque(const ServoState& s, const ServoParams& params) {
  if (!s.torque_enabled) return 0.0;
  const double err = (s.goal_position - rad_to_ticks(s.position)) * kRadPerTick;
  const double t = s.p_gain * params.gain_scale() * err - params.viscous_friction * s.velocity;
  return std::clamp(t, -params.torque_limit, params.torque_limit);
}

ServoState servo_step(const ServoState& s, const ServoParams& params, double load_torque, double dt) {
  if (!(dt > 0.0 && dt <= 0.02)) throw std::invalid_argument("servo_step dt must lie in (0, 0.02] s");
  ServoState n = s;
  const double J = params.rotor_inertia;
  double v_next;
  if (!s.torque_enabled) {
    v_next = s.velocity + dt * load_torque / J;
  } else {
    const double err = (s.goal_position - rad_to_ticks(s.position)) * kRadPerTick;
    const double drive = s.p_gain * params.gain_scale() * err;
    // Braking treated implicitly; falls back to the saturated torque.
    const double b = params.viscous_friction;
    v_next = (s.velocity + dt * (drive + load_torque) / J) / (1.0 + dt * b / J);
    const double motor = drive - b * v_next;
    if (std::abs(motor) > params.torque_limit) {
      v_next = s.velocity + dt * (std::copysign(params.torque_limit, motor) + load_torque) / J;
    }
  }
  n.position = s.position + 0.5 * dt * (s.velocity + v_next);
  n.velocity = v_next;
  return n;
}

}  // namespace hop
