// Shared test fixtures.
#pragma once

#include "hop/robot_model.hpp"

#include <json.hpp>

#include <fstream>
#include <iterator>
#include <string>

namespace fixtures {

inline std::string data_path(const std::string& rel) { return std::string(HOP_DATA_DIR) + "/" + rel; }

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const std::string& path) { return nlohmann::json::parse(read_text(path)); }

inline const hop::RobotModel& default_model() {
  static const hop::RobotModel m = hop::load_model(data_path("model/default_model.json"));
  return m;
}

inline nlohmann::json default_model_doc() {
  std::ifstream in(data_path("model/default_model.json"));
  return nlohmann::json::parse(in);
}

inline nlohmann::json servo_block() {
  return {{"type", "MX-106"}, {"stiffness", 12.0}, {"max_p_gain", 32}, {"ticks_per_rev", 4096}};
}

inline nlohmann::json link_doc(const std::string& name, double mass, const hop::Vec3& com, double ixx, double iyy,
                               double izz) {
  return {{"name", name},
          {"mass", mass},
          {"com", {com.x(), com.y(), com.z()}},
          {"inertia", {ixx, iyy, izz, 0.0, 0.0, 0.0}}};
}

/// Single revolute joint about y carrying a bob of mass m at distance l below
/// the axis.
inline hop::RobotModel pendulum(double m, double l, double inertia = 1e-6) {
  nlohmann::json doc;
  doc["root"] = "base";
  doc["links"] = {link_doc("base", 1.0, hop::Vec3::Zero(), 1.0, 1.0, 1.0),
                  link_doc("bob", m, hop::Vec3(0, 0, -l), inertia, inertia, inertia)};
  doc["joints"] = {{{"name", "swing"},
                    {"parent", "base"},
                    {"child", "bob"},
                    {"origin_xyz", {0.0, 0.0, 0.0}},
                    {"axis", {0.0, 1.0, 0.0}},
                    {"limits", {-3.2, 3.2}},
                    {"servo", servo_block()}}};
  return hop::RobotModel::from_json(doc, hop::Validation::generic);
}

struct DoublePendulum {
  double m1 = 1.3, m2 = 0.7;
  double l1 = 0.45;          // joint-to-joint length of the first link
  double c1 = 0.21, c2 = 0.18;  // COM distances from the proximal joint
  double I1 = 0.011, I2 = 0.006;  // inertia about the y axis through the COM
};

/// Planar two-link chain in the x-z plane, both joints about y.
inline hop::RobotModel double_pendulum(const DoublePendulum& p) {
  nlohmann::json doc;
  doc["root"] = "base";
  doc["links"] = {link_doc("base", 1.0, hop::Vec3::Zero(), 1.0, 1.0, 1.0),
                  link_doc("upper", p.m1, hop::Vec3(0, 0, -p.c1), 0.02, p.I1, 0.03),
                  link_doc("lower", p.m2, hop::Vec3(0, 0, -p.c2), 0.01, p.I2, 0.015)};
  doc["joints"] = {{{"name", "shoulder"},
                    {"parent", "base"},
                    {"child", "upper"},
                    {"origin_xyz", {0.0, 0.0, 0.0}},
                    {"axis", {0.0, 1.0, 0.0}},
                    {"limits", {-3.2, 3.2}},
                    {"servo", servo_block()}},
                   {{"name", "elbow"},
                    {"parent", "upper"},
                    {"child", "lower"},
                    {"origin_xyz", {0.0, 0.0, -p.l1}},
                    {"axis", {0.0, 1.0, 0.0}},
                    {"limits", {-3.2, 3.2}},
                    {"servo", servo_block()}}};
  return hop::RobotModel::from_json(doc, hop::Validation::generic);
}

}  // namespace fixtures
