// Command-line entry points: simulation, gait and motion dumps, camera
// calibration and the API server.
#include "hop/camera.hpp"
#include "hop/runtime.hpp"
#include "hop/service.hpp"

#include <CLI11.hpp>

#include <pthread.h>
#include <signal.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

namespace {

using namespace hop;

const std::string kDefaultConfig = std::string(HOP_DATA_DIR) + "/config/default.json";

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

// Runs the loop and writes the snapshot log to `log` (stdout when empty).
void simulate(Runtime& rt, const Scenario& scenario, long ticks, const std::string& log) {
  if (log.empty()) {
    run_loop(rt, scenario, ticks, &std::cout);
    return;
  }
  std::ofstream out = open_out(log);
  run_loop(rt, scenario, ticks, &out);
  if (!out) throw std::runtime_error("write failed: " + log);
}

void write_transcript(const Runtime& rt, const std::string& path) {
  if (path.empty()) return;
  std::ofstream out = open_out(path);
  out << rt.bus().transcript_text();
}

RuntimeConfig load_config(const std::string& path, const std::string& transcript) {
  RuntimeConfig cfg = load_runtime_config(path);
  cfg.transcript = cfg.transcript || !transcript.empty();
  return cfg;
}

void gait_dump(const RuntimeConfig& cfg, const GaitCommand& cmd, long ticks, std::ostream& out) {
  const RobotModel model = load_model(cfg.model_path);
  GaitState st = initial_gait_state(model, cfg.gait);
  out << "t,mu";
  const auto leg_cols = {"extension", "angle_x", "angle_y", "angle_z", "foot_angle_x", "foot_angle_y"};
  const auto arm_cols = {"extension", "angle_x", "angle_y"};
  for (const char* side : {"leg_left", "leg_right"}) {
    for (const char* c : leg_cols) out << ',' << side << '.' << c;
  }
  for (const char* side : {"arm_left", "arm_right"}) {
    for (const char* c : arm_cols) out << ',' << side << '.' << c;
  }
  for (const char* j : kJointNames) out << ',' << j;
  out << '\n' << std::setprecision(17);
  const auto leg = [&](const AbstractLegPose& p) {
    out << ',' << p.extension << ',' << p.angle_x << ',' << p.angle_y << ',' << p.angle_z << ',' << p.foot_angle_x
        << ',' << p.foot_angle_y;
  };
  const auto arm = [&](const AbstractArmPose& p) { out << ',' << p.extension << ',' << p.angle_x << ',' << p.angle_y; };
  for (long k = 0; k < ticks; ++k) {
    const GaitOutput g = gait_step(st, cmd, FusedAngles{}, model, cfg.gait, cfg.dt());
    out << static_cast<double>(k + 1) * cfg.dt() << ',' << g.state.phase;
    leg(g.abstract.leg_left);
    leg(g.abstract.leg_right);
    arm(g.abstract.arm_left);
    arm(g.abstract.arm_right);
    for (int i = 0; i < kNumJoints; ++i) out << ',' << g.q[i];
    out << '\n';
    st = g.state;
  }
}

std::vector<LandmarkObservation> synth_landmarks(const CameraModel& cam, const RobotModel& model,
                                                 const ExtrinsicOffsets& off, double noise_px, unsigned seed) {
  const double h = default_trunk_height(model);
  std::mt19937 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_px);
  std::vector<LandmarkObservation> out;
  for (double yaw : {-0.6, 0.0, 0.6}) {
    for (double pitch : {0.3, 0.7}) {
      const Pose pose = camera_pose(model, yaw, pitch, off, FusedAngles{}, h);
      for (int i = 0; i <= 8; ++i) {
        for (int j = 0; j <= 10; ++j) {
          const Vec2 ground(0.4 + 0.3 * i, -1.5 + 0.3 * j);
          const auto px = egocentric_to_pixel(ground, cam, pose);
          if (!px) continue;
          LandmarkObservation o;
          o.pixel = *px;
          if (noise_px > 0.0) {
            o.pixel += Vec2(noise(rng), noise(rng));
            o.pixel = o.pixel.cwiseMax(Vec2(0, 0)).cwiseMin(Vec2(cam.width - 1, cam.height - 1));
          }
          o.ground = ground;
          o.head_yaw = yaw;
          o.head_pitch = pitch;
          out.push_back(o);
        }
      }
    }
  }
  return out;
}

void print_report(const CalibrationReport& r, std::size_t n, std::ostream& out) {
  const Vec3& p = r.offsets.position;
  const Vec3& o = r.offsets.orientation;
  out << std::fixed << std::setprecision(6);
  out << "observations: " << n << '\n';
  out << "rms before:   " << r.rms_before << " m\n";
  out << "rms after:    " << r.rms_after << " m\n";
  out << "position:     " << p.x() << ' ' << p.y() << ' ' << p.z() << " m\n";
  out << "orientation:  " << o.x() << ' ' << o.y() << ' ' << o.z() << " rad\n";
  out << "evaluations:  " << r.evals << (r.converged ? " (converged)" : " (budget spent)") << '\n';
}

int serve(const RuntimeConfig& cfg, unsigned short port, const std::string& address, double speed) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  auto rt = std::make_shared<Runtime>(cfg);
  ApiServer::Options opt;
  opt.address = address;
  opt.port = port;
  opt.speed = speed;
  ApiServer server(rt, opt);
  server.start();
  std::cerr << "hop: serving on http://" << address << ':' << server.port() << '\n';
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  std::cerr << "hop: stopped after " << rt->ticks() << " ticks\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Humanoid control stack simulator"};
  app.require_subcommand(1);

  std::string config = kDefaultConfig;
  std::string scenario_path, log, transcript;
  long ticks = 500;

  auto* sim = app.add_subcommand("simulate", "Run the control loop over a scenario");
  sim->add_option("--config", config, "Runtime config file");
  sim->add_option("--scenario", scenario_path, "Scenario file (default: empty)");
  sim->add_option("--ticks", ticks, "Ticks to run")->check(CLI::PositiveNumber);
  sim->add_option("--log", log, "Snapshot log, one JSON object per line (default: stdout)");
  sim->add_option("--transcript", transcript, "Bus transcript output");

  GaitCommand cmd;
  cmd.walk = true;
  cmd.vx = 0.3;
  std::string gait_out;
  long gait_ticks = 500;
  auto* gd = app.add_subcommand("gait-dump", "Write per-tick gait CSV under an ideal estimate");
  gd->add_option("--config", config, "Runtime config file");
  gd->add_option("--ticks", gait_ticks, "Ticks to run")->check(CLI::PositiveNumber);
  gd->add_option("--vx", cmd.vx, "Forward command")->check(CLI::Range(-1.0, 1.0));
  gd->add_option("--vy", cmd.vy, "Lateral command")->check(CLI::Range(-1.0, 1.0));
  gd->add_option("--omega", cmd.omega, "Turn command")->check(CLI::Range(-1.0, 1.0));
  gd->add_option("--out", gait_out, "CSV output (default: stdout)");

  std::string motion;
  long play_ticks = 0;
  auto* play = app.add_subcommand("play", "Play a motion from the library on the simulated robot");
  play->add_option("--config", config, "Runtime config file");
  play->add_option("--motion", motion, "Motion name")->required();
  play->add_option("--ticks", play_ticks, "Ticks to run (default: motion length plus 0.5 s)")
      ->check(CLI::PositiveNumber);
  play->add_option("--log", log, "Snapshot log (default: stdout)");
  play->add_option("--transcript", transcript, "Bus transcript output");

  std::string camera_path = std::string(HOP_DATA_DIR) + "/camera/default_camera.json";
  std::string landmarks, calib_out;
  auto* cal = app.add_subcommand("calibrate-camera", "Fit camera mounting offsets to landmark observations");
  cal->add_option("--config", config, "Runtime config file (robot model)");
  cal->add_option("--camera", camera_path, "Camera file");
  cal->add_option("--landmarks", landmarks, "Landmark CSV u,v,x,y,head_yaw,head_pitch")->required();
  cal->add_option("--out", calib_out, "Calibration result JSON");

  std::vector<double> true_pos{0.0, 0.0, 0.0}, true_rot{0.0, 0.0, 0.0};
  double noise_px = 0.0;
  unsigned seed = 1;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth-landmarks", "Generate a synthetic landmark set for given mounting offsets");
  syn->add_option("--config", config, "Runtime config file (robot model)");
  syn->add_option("--camera", camera_path, "Camera file");
  syn->add_option("--position", true_pos, "Position offset x y z, m")->expected(3);
  syn->add_option("--orientation", true_rot, "Orientation offset x y z, rad")->expected(3);
  syn->add_option("--noise", noise_px, "Pixel noise standard deviation")->check(CLI::NonNegativeNumber);
  syn->add_option("--seed", seed, "Noise seed");
  syn->add_option("--out", synth_out, "CSV output (default: stdout)")->required();

  unsigned short port = 8080;
  std::string address = "127.0.0.1";
  double speed = 1.0;
  auto* srv = app.add_subcommand("serve", "Run the control loop behind the HTTP/WebSocket API");
  srv->add_option("--config", config, "Runtime config file");
  srv->add_option("--port", port, "TCP port (0 picks a free one)");
  srv->add_option("--address", address, "Bind address");
  srv->add_option("--speed", speed, "Loop pacing relative to real time (0: unpaced)")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      Runtime rt(load_config(config, transcript));
      const Scenario scenario = scenario_path.empty() ? Scenario{} : load_scenario(scenario_path);
      simulate(rt, scenario, ticks, log);
      write_transcript(rt, transcript);
    } else if (*gd) {
      const RuntimeConfig cfg = load_runtime_config(config);
      if (gait_out.empty()) {
        gait_dump(cfg, cmd, gait_ticks, std::cout);
      } else {
        std::ofstream out = open_out(gait_out);
        gait_dump(cfg, cmd, gait_ticks, out);
      }
    } else if (*play) {
      Runtime rt(load_config(config, transcript));
      const auto m = rt.motions().find(motion);
      if (!m) throw std::runtime_error("unknown motion '" + motion + "' in " + rt.config().motion_dir);
      if (play_ticks == 0) play_ticks = static_cast<long>(std::ceil((m->duration() + 0.5) * rt.config().loop_rate));
      Command c;
      c.type = Command::Type::play;
      c.motion = motion;
      simulate(rt, Scenario{{0.0, c}}, play_ticks, log);
      write_transcript(rt, transcript);
    } else if (*cal) {
      const RuntimeConfig cfg = load_runtime_config(config);
      const CameraModel cam = load_camera(camera_path);
      std::ifstream in = open_in(landmarks);
      std::vector<LandmarkObservation> obs;
      try {
        obs = read_landmarks_csv(in);
      } catch (const CameraError& e) {
        throw std::runtime_error(landmarks + ": " + e.what());
      }
      const CalibrationReport r = calibrate_extrinsics(obs, cam, load_model(cfg.model_path));
      print_report(r, obs.size(), std::cout);
      if (!calib_out.empty()) {
        nlohmann::json j = to_json(r);
        j["camera"] = to_json(cam);
        std::ofstream out = open_out(calib_out);
        out << j.dump(2) << '\n';
      }
    } else if (*syn) {
      const RuntimeConfig cfg = load_runtime_config(config);
      const CameraModel cam = load_camera(camera_path);
      ExtrinsicOffsets off{{true_pos[0], true_pos[1], true_pos[2]}, {true_rot[0], true_rot[1], true_rot[2]}};
      off.validate();
      const auto obs = synth_landmarks(cam, load_model(cfg.model_path), off, noise_px, seed);
      std::ofstream out = open_out(synth_out);
      write_landmarks_csv(out, obs);
      std::cerr << "hop: wrote " << obs.size() << " observations to " << synth_out << '\n';
    } else if (*srv) {
      return serve(load_runtime_config(config), port, address, speed);
    }
  } catch (const std::exception& e) {
    std::cerr << "hop: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
