#include "hop/camera.hpp"

#include "json_read.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace hop {

using nlohmann::json;

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw CameraError("camera resolution must be positive");
  if (!(fx > 0.0 && fy > 0.0)) throw CameraError("camera focal lengths must be positive");
  if (!(cx >= 0.0 && cx <= width - 1 && cy >= 0.0 && cy <= height - 1)) {
    throw CameraError("camera principal point must lie inside the image");
  }
  if (!std::isfinite(k1) || !std::isfinite(k2) || !std::isfinite(k3)) {
    throw CameraError("camera distortion coefficients must be finite");
  }
}

CameraModel camera_from_json(const json& j) {
  CameraModel c;
  try {
    const auto res = detail::numbers(detail::member(j, "resolution", ""), "resolution", 2);
    c.width = static_cast<int>(res[0]);
    c.height = static_cast<int>(res[1]);
    c.fx = detail::number_field(j, "fx", "");
    c.fy = detail::number_field(j, "fy", "");
    c.cx = detail::number_field(j, "cx", "");
    c.cy = detail::number_field(j, "cy", "");
    const auto k = detail::numbers(detail::member(j, "distortion", ""), "distortion", 3);
    c.k1 = k[0];
    c.k2 = k[1];
    c.k3 = k[2];
  } catch (const detail::SchemaViolation& e) {
    throw CameraError(std::string("camera file: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const CameraModel& c) {
  return {{"resolution", {c.width, c.height}}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx},
          {"cy", c.cy}, {"distortion", {c.k1, c.k2, c.k3}}};
}

CameraModel load_camera(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CameraError("cannot open camera file " + path);
  try {
    return camera_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw CameraError("camera file " + path + ": " + e.what());
  }
}

double distort_radius(double r, const CameraModel& c) {
  const double r2 = r * r;
  return r * (1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3)));
}

namespace {

double radius_slope(double r, const CameraModel& c) {
  const double r2 = r * r;
  return 1.0 + r2 * (3.0 * c.k1 + r2 * (5.0 * c.k2 + r2 * 7.0 * c.k3));
}

constexpr double kRadiusCap = 10.0;  // about 84 degrees off axis

}  // namespace

Vec2 distort(const Vec2& p, const CameraModel& c) {
  const double r2 = p.squaredNorm();
  return p * (1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3)));
}

double monotone_radius(const CameraModel& c) {
  constexpr int steps = 4000;
  double prev = 0.0;
  for (int i = 1; i <= steps; ++i) {
    const double r = kRadiusCap * i / steps;
    if (radius_slope(r, c) <= 0.0) {
      double lo = prev, hi = r;
      for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (radius_slope(mid, c) > 0.0 ? lo : hi) = mid;
      }
      return lo;
    }
    prev = r;
  }
  return kRadiusCap;
}

double invertible_radius(const CameraModel& c) { return distort_radius(monotone_radius(c), c); }

namespace {

double undistort_radius(double rd, const CameraModel& c, double r_lim, double tol, int max_iter, int& iters) {
  double r = std::min(rd, r_lim);
  for (iters = 1; iters <= max_iter; ++iters) {
    const double g = distort_radius(r, c) - rd;
    if (g == 0.0) return r;
    const double d = radius_slope(r, c);
    if (!(d > 1e-12)) throw CameraError("undistort: radial derivative vanished");
    const double next = std::clamp(r - g / d, 0.0, r_lim);
    const bool done = std::abs(g) <= tol && std::abs(next - r) <= tol;
    r = next;
    if (done) return r;
  }
  throw CameraError("undistort: Newton iteration did not converge");
}

}  // namespace

UndistortResult undistort_newton(const Vec2& p_d, const CameraModel& c, double tol, int max_iter) {
  const double rd = p_d.norm();
  if (!std::isfinite(rd)) throw CameraError("undistort: non-finite point");
  UndistortResult out;
  if (rd == 0.0) {
    out.point = p_d;
    out.iterations = 1;
    return out;
  }
  const double r_lim = monotone_radius(c);
  if (rd > distort_radius(r_lim, c)) throw CameraError("undistort: point outside the invertible radius");
  const double r = undistort_radius(rd, c, r_lim, tol, max_iter, out.iterations);
  out.point = p_d * (r / rd);
  return out;
}

Vec2 pixel_to_normalized(const Vec2& px, const CameraModel& c) {
  return {(px.x() - c.cx) / c.fx, (px.y() - c.cy) / c.fy};
}

Vec2 normalized_to_pixel(const Vec2& p, const CameraModel& c) { return {c.cx + c.fx * p.x(), c.cy + c.fy * p.y()}; }

// ---------------------------------------------------------------------------

std::optional<Vec2> DistortionLuts::bilinear(const std::vector<float>& map, const std::vector<unsigned char>& ok,
                                             int w, int h, double x, double y) {
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1)) return std::nullopt;
  int i = static_cast<int>(x), j = static_cast<int>(y);
  if (i == w - 1) i = std::max(0, w - 2);
  if (j == h - 1) j = std::max(0, h - 2);
  const double ax = x - i, ay = y - j;
  const int i1 = std::min(i + 1, w - 1), j1 = std::min(j + 1, h - 1);
  const std::size_t n00 = std::size_t(j) * w + i, n10 = std::size_t(j) * w + i1;
  const std::size_t n01 = std::size_t(j1) * w + i, n11 = std::size_t(j1) * w + i1;
  if (!ok[n00] || !ok[n10] || !ok[n01] || !ok[n11]) return std::nullopt;
  Vec2 out;
  for (int c = 0; c < 2; ++c) {
    const double v00 = map[2 * n00 + c], v10 = map[2 * n10 + c], v01 = map[2 * n01 + c], v11 = map[2 * n11 + c];
    out[c] = (1.0 - ay) * ((1.0 - ax) * v00 + ax * v10) + ay * ((1.0 - ax) * v01 + ax * v11);
  }
  return out;
}

std::optional<Vec2> DistortionLuts::undistort(const Vec2& raw) const {
  return bilinear(inv_, inv_ok_, w_, h_, raw.x(), raw.y());
}

std::optional<Vec2> DistortionLuts::distort(const Vec2& und) const {
  return bilinear(fwd_, fwd_ok_, fw_, fh_, und.x() - fx0_, und.y() - fy0_);
}

std::optional<Vec2> DistortionLuts::undistort_node(int u, int v) const {
  if (u < 0 || v < 0 || u >= w_ || v >= h_) return std::nullopt;
  const std::size_t n = std::size_t(v) * w_ + u;
  if (!inv_ok_[n]) return std::nullopt;
  return Vec2(inv_[2 * n], inv_[2 * n + 1]);
}

std::optional<Vec2> DistortionLuts::distort_node(int i, int j) const {
  if (i < 0 || j < 0 || i >= fw_ || j >= fh_) return std::nullopt;
  const std::size_t n = std::size_t(j) * fw_ + i;
  if (!fwd_ok_[n]) return std::nullopt;
  return Vec2(fwd_[2 * n], fwd_[2 * n + 1]);
}

Vec2 DistortionLuts::distort_node_position(int i, int j) const { return {fx0_ + i, fy0_ + j}; }

std::size_t DistortionLuts::valid_pixels() const {
  return static_cast<std::size_t>(std::count(inv_ok_.begin(), inv_ok_.end(), 1));
}

DistortionLuts build_luts(const CameraModel& c) {
  c.validate();
  DistortionLuts L;
  L.w_ = c.width;
  L.h_ = c.height;
  L.inv_.assign(std::size_t(2) * c.width * c.height, 0.0f);
  L.inv_ok_.assign(std::size_t(c.width) * c.height, 0);
  const double r_lim = monotone_radius(c);
  const double rd_lim = distort_radius(r_lim, c);
  double lo_x = std::numeric_limits<double>::max(), hi_x = -lo_x, lo_y = lo_x, hi_y = -lo_x;
  for (int v = 0; v < c.height; ++v) {
    for (int u = 0; u < c.width; ++u) {
      const double du = u - c.cx, dv = v - c.cy;
      const double rd = std::hypot(du / c.fx, dv / c.fy);
      if (rd > rd_lim) continue;
      double s = 1.0;
      if (rd > 0.0) {
        int iters = 0;
        try {
          s = undistort_radius(rd, c, r_lim, 1e-12, 100, iters) / rd;
        } catch (const CameraError&) {
          continue;
        }
      }
      const double x = c.cx + du * s, y = c.cy + dv * s;
      const std::size_t n = std::size_t(v) * c.width + u;
      L.inv_[2 * n] = static_cast<float>(x);
      L.inv_[2 * n + 1] = static_cast<float>(y);
      L.inv_ok_[n] = 1;
      lo_x = std::min(lo_x, x);
      hi_x = std::max(hi_x, x);
      lo_y = std::min(lo_y, y);
      hi_y = std::max(hi_y, y);
    }
  }
  if (lo_x > hi_x) return L;
  L.fx0_ = std::floor(lo_x) - 2.0;
  L.fy0_ = std::floor(lo_y) - 2.0;
  L.fw_ = static_cast<int>(std::ceil(hi_x) + 2.0 - L.fx0_) + 1;
  L.fh_ = static_cast<int>(std::ceil(hi_y) + 2.0 - L.fy0_) + 1;
  L.fwd_.assign(std::size_t(2) * L.fw_ * L.fh_, 0.0f);
  L.fwd_ok_.assign(std::size_t(L.fw_) * L.fh_, 0);
  for (int j = 0; j < L.fh_; ++j) {
    for (int i = 0; i < L.fw_; ++i) {
      const double du = L.fx0_ + i - c.cx, dv = L.fy0_ + j - c.cy;
      const double r = std::hypot(du / c.fx, dv / c.fy);
      if (r > r_lim) continue;
      const double r2 = r * r;
      const double s = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
      const std::size_t n = std::size_t(j) * L.fw_ + i;
      L.fwd_[2 * n] = static_cast<float>(c.cx + du * s);
      L.fwd_[2 * n + 1] = static_cast<float>(c.cy + dv * s);
      L.fwd_ok_[n] = 1;
    }
  }
  return L;
}

// ---------------------------------------------------------------------------

Quat ExtrinsicOffsets::rotation() const {
  return normalized(rot_z(orientation.z()) * rot_y(orientation.y()) * rot_x(orientation.x()));
}

void ExtrinsicOffsets::validate() const {
  if (!position.allFinite() || !orientation.allFinite()) throw CameraError("extrinsic offsets must be finite");
  if ((orientation.array().abs() >= 0.35).any()) {
    throw CameraError("extrinsic orientation offsets must stay below 0.35 rad per axis");
  }
}

namespace {

Pose nominal_camera(const RobotModel& model, double yaw, double pitch) {
  VecX q = VecX::Zero(model.num_joints());
  q[kHeadYaw] = yaw;
  q[kHeadPitch] = pitch;
  return forward_kinematics(model, q).at("camera");
}

Pose to_ground(const Pose& in_trunk, const ExtrinsicOffsets& off, const FusedAngles& att, double height) {
  const Pose mount{off.position, off.rotation()};
  FusedAngles tilt = att;
  tilt.yaw = 0.0;
  tilt.hemisphere = 1;
  const Pose trunk{Vec3(0, 0, height), quat_from_fused(tilt)};
  return trunk * (in_trunk * mount);
}

}  // namespace

Pose camera_pose(const RobotModel& model, double yaw, double pitch, const ExtrinsicOffsets& off,
                 const FusedAngles& att, double height) {
  return to_ground(nominal_camera(model, yaw, pitch), off, att, height);
}

double default_trunk_height(const RobotModel& model) {
  return -forward_kinematics(model, VecX::Zero(model.num_joints())).at("left_sole").position.z();
}

GroundProjection ray_to_ground(const Vec2& n, const Pose& cam) {
  GroundProjection g;
  const Vec3 d = cam.rotation * Vec3(1.0, -n.x(), -n.y());
  if (!(d.z() < -1e-12) || !(cam.position.z() > 0.0)) {
    g.above_horizon = true;
    return g;
  }
  const double t = -cam.position.z() / d.z();
  g.point = Vec2(cam.position.x() + t * d.x(), cam.position.y() + t * d.y());
  return g;
}

GroundProjection pixel_to_egocentric(const Vec2& px, const ProjectionSetup& s, double yaw, double pitch,
                                     const ExtrinsicOffsets& off, const FusedAngles& att) {
  if (!s.camera || !s.model) throw std::invalid_argument("projection setup needs a camera and a model");
  const CameraModel& c = *s.camera;
  if (!(px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= c.width - 1 && px.y() <= c.height - 1)) {
    throw CameraError("pixel outside the image");
  }
  Vec2 n;
  if (s.mode == UndistortMode::lut) {
    if (!s.luts) throw std::invalid_argument("LUT projection needs lookup tables");
    const auto up = s.luts->undistort(px);
    if (!up) throw CameraError("pixel in the invalid distortion region");
    n = pixel_to_normalized(*up, c);
  } else {
    n = undistort_newton(pixel_to_normalized(px, c), c).point;
  }
  return ray_to_ground(n, camera_pose(*s.model, yaw, pitch, off, att, s.trunk_height));
}

std::optional<Vec2> egocentric_to_pixel(const Vec2& ground, const CameraModel& c, const Pose& cam) {
  const Vec3 local = cam.rotation.conjugate() * (Vec3(ground.x(), ground.y(), 0.0) - cam.position);
  if (!(local.x() > 1e-9)) return std::nullopt;
  const Vec2 n(-local.y() / local.x(), -local.z() / local.x());
  if (n.norm() > monotone_radius(c)) return std::nullopt;
  const Vec2 px = normalized_to_pixel(distort(n, c), c);
  if (!(px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= c.width - 1 && px.y() <= c.height - 1)) return std::nullopt;
  return px;
}

// ---------------------------------------------------------------------------

namespace {

struct BudgetSpent {};

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                             const std::vector<double>& x0, const std::vector<double>& scale,
                             const NelderMeadOptions& opt) {
  const std::size_t n = x0.size();
  if (n == 0) throw std::invalid_argument("nelder_mead needs at least one dimension");
  if (scale.size() != n) throw std::invalid_argument("nelder_mead scale size mismatch");
  using Point = std::vector<double>;

  NelderMeadResult best;
  best.f = std::numeric_limits<double>::infinity();
  auto eval = [&](const Point& x) {
    if (best.evals >= opt.max_evals) throw BudgetSpent{};
    const double f = objective(x);
    ++best.evals;
    if (f < best.f || best.x.empty()) {
      best.f = f;
      best.x = x;
    }
    return f;
  };
  auto affine = [&](const Point& a, const Point& b, double t) {  // a + t (b - a)
    Point p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = a[i] + t * (b[i] - a[i]);
    return p;
  };

  std::vector<Point> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  try {
    fs[0] = eval(xs[0]);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i + 1][i] += scale[i];
      fs[i + 1] = eval(xs[i + 1]);
    }
    for (;;) {
      std::vector<std::size_t> order(n + 1);
      for (std::size_t i = 0; i <= n; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
      std::vector<Point> sx;
      std::vector<double> sf;
      for (std::size_t i : order) {
        sx.push_back(xs[i]);
        sf.push_back(fs[i]);
      }
      xs = std::move(sx);
      fs = std::move(sf);

      double diameter = 0.0;
      for (std::size_t i = 1; i <= n; ++i) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < n; ++k) d2 += (xs[i][k] - xs[0][k]) * (xs[i][k] - xs[0][k]);
        diameter = std::max(diameter, std::sqrt(d2));
      }
      if (diameter < opt.tol) {
        best.converged = true;
        break;
      }

      Point centroid(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) centroid[k] += xs[i][k] / n;
      }
      const Point xr = affine(centroid, xs[n], -1.0);
      const double fr = eval(xr);
      if (fr < fs[0]) {
        const Point xe = affine(centroid, xs[n], -2.0);
        const double fe = eval(xe);
        if (fe < fr) {
          xs[n] = xe;
          fs[n] = fe;
        } else {
          xs[n] = xr;
          fs[n] = fr;
        }
        continue;
      }
      if (fr < fs[n - 1]) {
        xs[n] = xr;
        fs[n] = fr;
        continue;
      }
      bool shrink = false;
      if (fr < fs[n]) {
        const Point xc = affine(centroid, xr, 0.5);
        const double fc = eval(xc);
        if (fc <= fr) {
          xs[n] = xc;
          fs[n] = fc;
        } else {
          shrink = true;
        }
      } else {
        const Point xc = affine(centroid, xs[n], 0.5);
        const double fc = eval(xc);
        if (fc < fs[n]) {
          xs[n] = xc;
          fs[n] = fc;
        } else {
          shrink = true;
        }
      }
      if (shrink) {
        for (std::size_t i = 1; i <= n; ++i) {
          xs[i] = affine(xs[0], xs[i], 0.5);
          fs[i] = eval(xs[i]);
        }
      }
    }
  } catch (const BudgetSpent&) {
    best.converged = false;
  }
  return best;
}

// ---------------------------------------------------------------------------

std::vector<LandmarkObservation> read_landmarks_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CameraError("landmark file: missing header");
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
  if (line != "u,v,x,y,head_yaw,head_pitch") throw CameraError("landmark file: unexpected header '" + line + "'");
  std::vector<LandmarkObservation> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    try {
      while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw CameraError("landmark file: bad number on line " + std::to_string(line_no));
    }
    if (v.size() != 6) throw CameraError("landmark file: expected 6 columns on line " + std::to_string(line_no));
    out.push_back({Vec2(v[0], v[1]), Vec2(v[2], v[3]), v[4], v[5]});
  }
  return out;
}

void write_landmarks_csv(std::ostream& out, const std::vector<LandmarkObservation>& obs) {
  out << "u,v,x,y,head_yaw,head_pitch\n";
  out.precision(17);
  for (const auto& o : obs) {
    out << o.pixel.x() << ',' << o.pixel.y() << ',' << o.ground.x() << ',' << o.ground.y() << ',' << o.head_yaw
        << ',' << o.head_pitch << '\n';
  }
}

json to_json(const CalibrationReport& r) {
  const Vec3& p = r.offsets.position;
  const Vec3& o = r.offsets.orientation;
  return {{"position", {p.x(), p.y(), p.z()}},
          {"orientation", {o.x(), o.y(), o.z()}},
          {"rms_before", r.rms_before},
          {"rms_after", r.rms_after},
          {"evals", r.evals},
          {"converged", r.converged}};
}

namespace {

struct PreparedObservation {
  Vec2 ray;     // undistorted normalized
  Pose nominal; // camera in the trunk frame
  Vec2 ground;
};

std::vector<PreparedObservation> prepare(const std::vector<LandmarkObservation>& obs, const CameraModel& cam,
                                         const RobotModel& model) {
  std::vector<PreparedObservation> out;
  for (const auto& o : obs) {
    out.push_back({undistort_newton(pixel_to_normalized(o.pixel, cam), cam).point,
                   nominal_camera(model, o.head_yaw, o.head_pitch), o.ground});
  }
  return out;
}

constexpr double kHorizonPenalty = 100.0;  // m^2 for a ray that misses the ground

double mean_squared(const std::vector<PreparedObservation>& prep, const ExtrinsicOffsets& off, double height) {
  double sum = 0.0;
  for (const auto& p : prep) {
    const GroundProjection g = ray_to_ground(p.ray, to_ground(p.nominal, off, FusedAngles{}, height));
    sum += g.above_horizon ? kHorizonPenalty : (g.point - p.ground).squaredNorm();
  }
  return sum / static_cast<double>(prep.size());
}

ExtrinsicOffsets from_params(const std::vector<double>& x) {
  ExtrinsicOffsets o;
  o.position = Vec3(x[0], x[1], x[2]);
  o.orientation = Vec3(x[3], x[4], x[5]);
  return o;
}

}  // namespace

double reprojection_rms(const std::vector<LandmarkObservation>& obs, const CameraModel& cam,
                        const RobotModel& model, const ExtrinsicOffsets& off) {
  if (obs.empty()) return 0.0;
  return std::sqrt(mean_squared(prepare(obs, cam, model), off, default_trunk_height(model)));
}

CalibrationReport calibrate_extrinsics(const std::vector<LandmarkObservation>& obs, const CameraModel& cam,
                                       const RobotModel& model, const ExtrinsicOffsets& initial,
                                       const NelderMeadOptions& opt) {
  if (obs.size() < 6) throw CameraError("calibration needs at least 6 observations");
  initial.validate();
  int poses = 0;
  for (std::size_t i = 0; i < obs.size() && poses < 2; ++i) {
    bool seen = false;
    for (std::size_t k = 0; k < i; ++k) {
      seen = seen || (std::abs(obs[k].head_yaw - obs[i].head_yaw) < 1e-6 &&
                      std::abs(obs[k].head_pitch - obs[i].head_pitch) < 1e-6);
    }
    if (!seen) ++poses;
  }
  if (poses < 2) throw CameraError("calibration needs observations from at least 2 head poses");
  Vec2 mean = Vec2::Zero();
  for (const auto& o : obs) mean += o.ground;
  mean /= static_cast<double>(obs.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& o : obs) cov += (o.ground - mean) * (o.ground - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  if (es.eigenvalues()[0] <= 1e-10 * std::max(1e-12, es.eigenvalues()[1])) {
    throw CameraError("calibration landmarks are collinear");
  }

  const auto prep = prepare(obs, cam, model);
  const double height = default_trunk_height(model);
  auto objective = [&](const std::vector<double>& x) {
    for (int k = 3; k < 6; ++k) {
      if (std::abs(x[k]) >= 0.35) return 1e6 + std::abs(x[k]);
    }
    return mean_squared(prep, from_params(x), height);
  };
  const Vec3& p = initial.position;
  const Vec3& o = initial.orientation;
  const std::vector<double> x0{p.x(), p.y(), p.z(), o.x(), o.y(), o.z()};
  const NelderMeadResult r = nelder_mead(objective, x0, {0.01, 0.01, 0.01, 0.02, 0.02, 0.02}, opt);

  CalibrationReport rep;
  rep.rms_before = std::sqrt(objective(x0));
  rep.offsets = from_params(r.x);
  rep.rms_after = std::sqrt(r.f);
  rep.evals = r.evals;
  rep.converged = r.converged;
  return rep;
}

}  // namespace hop
