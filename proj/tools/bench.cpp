// Control-loop timing report against the 10 ms tick budget.
#include "hop/runtime.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace {

using namespace hop;
using Clock = std::chrono::steady_clock;

struct Stats {
  double mean = 0.0, p50 = 0.0, p99 = 0.0, max = 0.0;  // ms
};

Stats summarize(std::vector<double> ms) {
  std::sort(ms.begin(), ms.end());
  Stats s;
  s.mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  s.p50 = ms[ms.size() / 2];
  s.p99 = ms[std::min(ms.size() - 1, ms.size() * 99 / 100)];
  s.max = ms.back();
  return s;
}

double elapsed_ms(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

// Mean wall time of `fn` in microseconds.
double micro(int reps, const std::function<void()>& fn) {
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return elapsed_ms(t0) * 1e3 / reps;
}

struct Run {
  std::string name;
  Stats wall;
  double bus_ms = 0.0;  // simulated read + write time, worst tick
};

Run run_behavior(const RuntimeConfig& cfg, const std::string& name, const std::optional<Command>& start, long ticks) {
  Runtime rt(cfg);
  std::vector<double> ms;
  ms.reserve(ticks);
  Run r{name, {}, 0.0};
  for (long k = 0; k < ticks; ++k) {
    if (start && (k == 0 || rt.behavior() == Behavior::idle)) rt.apply(*start);
    const auto t0 = Clock::now();
    const RobotSnapshot s = rt.tick();
    ms.push_back(elapsed_ms(t0));
    r.bus_ms = std::max(r.bus_ms, 1e3 * (s.bus.read_elapsed + s.bus.write_elapsed));
  }
  r.wall = summarize(ms);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control-loop benchmark"};
  std::string config = std::string(HOP_DATA_DIR) + "/config/default.json";
  long ticks = 5000;
  std::string json_out;
  app.add_option("--config", config, "Runtime config file");
  app.add_option("--ticks", ticks, "Ticks per behavior")->check(CLI::PositiveNumber);
  app.add_option("--json", json_out, "Also write the report as JSON");
  CLI11_PARSE(app, argc, argv);

  try {
    RuntimeConfig cfg = load_runtime_config(config);
    cfg.transcript = false;
    const double budget_ms = 1e3 * cfg.dt();

    Command walk;
    walk.type = Command::Type::gait;
    walk.gait = {0.5, 0.2, 0.3, true};
    Command wave;
    wave.type = Command::Type::play;
    wave.motion = "wave";
    std::vector<Run> runs = {run_behavior(cfg, "idle", std::nullopt, ticks), run_behavior(cfg, "gait", walk, ticks),
                             run_behavior(cfg, "motion:wave", wave, ticks)};

    const RobotModel model = load_model(cfg.model_path);
    bus::VirtualBus b(cfg.bus);
    b.set_transcript_enabled(false);
    for (int i = 1; i <= kNumJoints; ++i) {
      b.attach(bus::ServoDevice(static_cast<std::uint8_t>(i), servo_params(model.joints()[i - 1].servo), "MX-106", {}));
    }
    std::vector<bus::BulkReadRequest> req;
    for (std::uint8_t id = 1; id <= kNumJoints; ++id) req.push_back({id, bus::reg::present_position, 6});
    const double bulk_sim = bus::bulk_read(b, req).elapsed;
    double indiv_sim = 0.0;
    for (const auto& q : req) {
      double e = 0.0;
      bus::read_register(b, q.id, q.addr, q.len, &e);
      indiv_sim += e;
    }
    std::vector<std::pair<std::uint8_t, bus::Bytes>> goals;
    for (std::uint8_t id = 1; id <= kNumJoints; ++id) goals.push_back({id, {16, 0, 0x00, 0x08}});

    FilterState fs = make_filter(cfg.filter);
    ImuSample imu;
    imu.gyro = Vec3(0.01, -0.02, 0.03);
    imu.accel = Vec3(0.1, 0.2, kGravity);
    imu.dt = cfg.dt();
    GaitState gs = initial_gait_state(model, cfg.gait);
    const JointTrajPoint pt = static_point(halt_joint_pose(model, cfg.gait));
    const ServoParams sp = servo_params(model.joints()[kLeftKneePitch].servo);
    ServoState ss;
    ss.goal_position = 100;
    ss.p_gain = 16.0;

    const int reps = 2000;
    const std::vector<std::pair<std::string, double>> parts = {
        {"bulk read (20 servos)", micro(reps, [&] { bus::bulk_read(b, req); })},
        {"filter update", micro(reps, [&] { fs = filter_update(fs, imu); })},
        {"gait step", micro(reps, [&] { gs = gait_step(gs, walk.gait, {}, model, cfg.gait, cfg.dt()).state; })},
        {"inverse dynamics", micro(reps, [&] { inverse_dynamics(model, pt, Vec3(0, 0, -kGravity), {0.6, 0.4}); })},
        {"sync write (20 servos)", micro(reps, [&] { bus::sync_write(b, 28, 4, goals); })},
        {"servo substeps (20 x " + std::to_string(cfg.plant.servo_substeps) + ")", micro(reps, [&] {
           for (int j = 0; j < kNumJoints * cfg.plant.servo_substeps; ++j) {
             ss = servo_step(ss, sp, 0.5, cfg.dt() / cfg.plant.servo_substeps);
           }
         })},
    };

    std::printf("tick budget %.3f ms at %.0f Hz, %ld ticks per behavior\n\n", budget_ms, cfg.loop_rate, ticks);
    std::printf("%-14s %10s %10s %10s %10s %14s\n", "behavior", "mean ms", "p50 ms", "p99 ms", "max ms", "bus sim ms");
    bool ok = true;
    for (const Run& r : runs) {
      std::printf("%-14s %10.4f %10.4f %10.4f %10.4f %14.3f\n", r.name.c_str(), r.wall.mean, r.wall.p50, r.wall.p99,
                  r.wall.max, r.bus_ms);
      ok = ok && r.wall.max < budget_ms && r.bus_ms < budget_ms;
    }
    std::printf("\n%-28s %10s\n", "component", "mean us");
    for (const auto& [name, us] : parts) std::printf("%-28s %10.2f\n", name.c_str(), us);
    std::printf("\nsimulated bus: bulk read %.3f ms, 20 individual reads %.3f ms, ratio %.3f\n", 1e3 * bulk_sim,
                1e3 * indiv_sim, bulk_sim / indiv_sim);
    ok = ok && bulk_sim < indiv_sim;
    std::printf("verdict: %s\n", ok ? "within budget" : "OVER BUDGET");

    if (!json_out.empty()) {
      nlohmann::json j;
      j["budget_ms"] = budget_ms;
      for (const Run& r : runs) {
        j["behaviors"][r.name] = {{"mean_ms", r.wall.mean}, {"p50_ms", r.wall.p50}, {"p99_ms", r.wall.p99},
                                  {"max_ms", r.wall.max}, {"bus_sim_ms", r.bus_ms}};
      }
      for (const auto& [name, us] : parts) j["components_us"][name] = us;
      j["bulk_read_ms"] = 1e3 * bulk_sim;
      j["individual_reads_ms"] = 1e3 * indiv_sim;
      j["within_budget"] = ok;
      std::ofstream out(json_out);
      if (!out) throw std::runtime_error("cannot write " + json_out);
      out << j.dump(2) << '\n';
    }
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hop_bench: error: %s\n", e.what());
    return 1;
  }
}
