#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "mobman/protocol.hpp"
#include "mobman/scenario.hpp"
#include "mobman/service.hpp"
#include "mobman/simulation.hpp"

namespace mobman {

inline constexpr const char* kVersion = "0.1.0";

struct CommonOptions {
  std::string scenario;
  std::optional<std::string> map;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::uint64_t> ticks;
  std::optional<std::string> config;
};

struct ServeOptions {
  int port = 8765;
  double tick_hz = 20.0;
  LinkModel link;
  std::optional<std::string> record;
  std::optional<std::string> script;
  bool headless = false;
};

/// Scenario file with an optional JSON merge-patch overlay.
inline Scenario load_scenario_with(const std::string& path, const std::optional<std::string>& config) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ValidationError("scenario " + path + ": " + e.what());
  }
  if (config) {
    std::ifstream cin(*config);
    if (!cin) throw IoError("cannot open config: " + *config);
    Json patch;
    try {
      cin >> patch;
    } catch (const Json::exception& e) {
      throw ValidationError("config " + *config + ": " + e.what());
    }
    j.merge_patch(patch);
  }
  return parse_scenario(j);
}

inline std::uint64_t run_seed(const Scenario& s, const CommonOptions& o) { return o.seed.value_or(s.seed); }

/// Loads --map and checks it belongs to the scenario, or builds the map in memory.
inline std::shared_ptr<const ReferenceMap> obtain_map(const Scenario& s, const std::optional<std::string>& path,
                                                      std::uint64_t seed) {
  if (!path) return std::make_shared<ReferenceMap>(build_map_for(s, s.effective_map_seed(seed)));
  MapFile mf = read_map(*path);
  const auto want = scenario_hash(s);
  if (mf.scenario_hash != want) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "map %016llx does not match scenario %016llx",
                  static_cast<unsigned long long>(mf.scenario_hash), static_cast<unsigned long long>(want));
    throw ValidationError(std::string("map/scenario mismatch: ") + buf);
  }
  return std::make_shared<ReferenceMap>(mf.points);
}

inline std::filesystem::path ensure_dir(const std::string& out) {
  std::filesystem::path p = out.empty() ? "." : out;
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw IoError("cannot create output directory " + p.string());
  return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::string trajectory_csv(const std::vector<TickRecord>& log) {
  std::ostringstream os;
  os << "# mobman " << kVersion << "\n";
  os << "tick,t,gt_x,gt_y,gt_theta_deg,est_x,est_y,est_theta_deg,pos_err,head_err_deg,v_cmd,omega_cmd,v,omega,"
        "phase,mode,estop,lost,matched,icp_rms,inlier_fraction,battery\n";
  char buf[512];
  for (const auto& r : log) {
    const double pe = (r.gt.position() - r.est.position()).norm();
    const double he = rad2deg(wrap_angle(r.gt.theta - r.est.theta));
    std::snprintf(buf, sizeof buf,
                  "%llu,%.3f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%s,%s,%d,%d,%d,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(r.tick), r.t, r.gt.x, r.gt.y, rad2deg(r.gt.theta), r.est.x, r.est.y,
                  rad2deg(r.est.theta), pe, he, r.commanded.v, r.commanded.omega, r.achieved.v, r.achieved.omega,
                  r.phase.c_str(), to_string(r.mode), r.estop ? 1 : 0, r.lost ? 1 : 0, r.matched ? 1 : 0, r.icp_rms, r.inlier_fraction,
                  r.battery);
    os << buf;
  }
  return os.str();
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

/// Wall-clock data lives here only, so the other outputs stay byte-stable.
inline void write_run_info(const std::filesystem::path& dir, const std::string& command, double wall_seconds) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char ts[32];
  std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  write_text(dir / "run_info.json",
             dump({{"version", kVersion}, {"command", command}, {"finished_utc", ts}, {"wall_seconds", wall_seconds}}));
}

inline Json route_summary(const Scenario& s, std::uint64_t seed, const RouteResult& r, std::size_t route_len) {
  const auto e = pose_errors(r.log);
  double min_inliers = 1.0;
  std::size_t matched = 0;
  for (const auto& t : r.log)
    if (t.matched) {
      min_inliers = std::min(min_inliers, t.inlier_fraction);
      ++matched;
    }
  return {{"experiment", "navigate"},
          {"scenario", s.name},
          {"seed", seed},
          {"map_seed", s.effective_map_seed(seed)},
          {"occlusion_deg", s.lidar.occlusion_width_deg},
          {"status", to_string(r.status)},
          {"completed", r.status == RouteStatus::kCompleted},
          {"waypoints_reached", r.waypoints_reached},
          {"waypoints_total", route_len},
          {"ticks", r.log.size()},
          {"sim_time", r.log.empty() ? 0.0 : r.log.back().t},
          {"path_length", path_length(r.log)},
          {"p95_position_error", e.p95_position},
          {"p95_heading_error_deg", rad2deg(e.p95_heading)},
          {"max_position_error", e.max_position},
          {"mean_position_error", e.mean_position},
          {"matched_ticks", matched},
          {"min_inlier_fraction", matched == 0 ? 0.0 : min_inliers},
          {"lost_events", r.lost_events},
          {"min_clearance", std::isfinite(r.min_clearance) ? r.min_clearance : -1.0},
          {"final_position_error", r.final_gt_error}};
}

inline Json alignment_json(const Scenario& s, std::uint64_t seed, const Pose2& start, const AlignmentRun& run) {
  const auto& r = run.report;
  Json phases = Json::array();
  for (const auto& p : r.phases_log) phases.push_back({{"phase", to_string(p.phase)}, {"t", p.t}});
  return {{"experiment", "align"},
          {"scenario", s.name},
          {"seed", seed},
          {"start", {{"x", start.x}, {"y", start.y}, {"theta_deg", rad2deg(start.theta)}}},
          {"final_phase", to_string(r.final_phase)},
          {"success", r.success},
          {"failure_reason", r.failure_reason},
          {"standoff_error", r.standoff_error},
          {"angular_error_deg", rad2deg(r.angular_error)},
          {"lateral_error", r.lateral_error},
          {"camera_angle_error_deg", rad2deg(r.camera_angle_error)},
          {"arm_compensation_deg", rad2deg(r.arm_compensation)},
          {"est_standoff_error", r.est_standoff_error},
          {"est_angular_error_deg", rad2deg(r.est_angular_error)},
          {"panel_segment", r.panel_segment ? Json(*r.panel_segment) : Json(nullptr)},
          {"panel_freezes", r.panel_freezes},
          {"phase_order_valid", phase_order_valid(r.phases_log)},
          {"phases", phases},
          {"ticks", run.log.size()},
          {"lost_events", run.lost_events}};
}

// ---------------------------------------------------------------------------

inline std::string default_map_name(const std::string& out) { return out.empty() ? "map.csv" : out; }

/// Mapping pass; --out is the map file (".bin" for binary).
inline int cmd_map(const CommonOptions& o, std::ostream& log = std::cout) {
  const Scenario s = load_scenario_with(o.scenario, o.config);
  const std::uint64_t seed = run_seed(s, o);
  const ReferenceMap map = build_map_for(s, s.effective_map_seed(seed));
  const std::string path = default_map_name(o.out);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  write_map(path, map, scenario_hash(s));
  log << "wrote " << map.size() << " points to " << path << "\n";
  return 0;
}

inline int cmd_navigate(const CommonOptions& o, bool paired_occlusion = false, std::ostream& log = std::cout) {
  const auto t0 = std::chrono::steady_clock::now();
  Scenario s = load_scenario_with(o.scenario, o.config);
  if (s.route.empty()) throw ValidationError("scenario has no route");
  const std::uint64_t seed = run_seed(s, o);
  const auto dir = ensure_dir(o.out);
  const auto map = obtain_map(s, o.map, seed);
  RouteOptions ro;
  if (o.ticks) ro.max_ticks = *o.ticks;

  Simulation sim(s, map, seed);
  const RouteResult res = run_route(sim, s.route, ro);
  Json summary = route_summary(s, seed, res, s.route.size());
  summary["coasted_updates"] = sim.tracker().coasted_updates();
  Json events = Json::array();
  for (const auto& e : sim.events()) events.push_back(event_payload(e));
  summary["events"] = events;
  bool ok = res.status == RouteStatus::kCompleted;

  if (paired_occlusion) {
    Scenario open = s;
    open.lidar.occlusion_width_deg = s.lidar.occlusion_width_deg > 0.0 ? 0.0 : 60.0;
    Simulation sim2(open, map, seed);
    const RouteResult res2 = run_route(sim2, open.route, ro);
    Json other = route_summary(open, seed, res2, open.route.size());
    const double a = summary["p95_position_error"].get<double>();
    const double b = other["p95_position_error"].get<double>();
    summary["paired"] = other;
    summary["p95_position_error_ratio"] = b > 0.0 ? a / b : 0.0;
    write_text(dir / "trajectory_paired.csv", trajectory_csv(res2.log));
    ok = ok && res2.status == RouteStatus::kCompleted;
  }
  write_text(dir / "trajectory.csv", trajectory_csv(res.log));
  write_text(dir / "summary.json", dump(summary));
  write_run_info(dir, "navigate", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  log << "navigate " << s.name << " seed " << seed << ": " << to_string(res.status) << ", p95 position error "
      << summary["p95_position_error"].get<double>() << " m\n";
  return ok ? 0 : static_cast<int>(ExitCode::kRuntime);
}

inline int cmd_align(const CommonOptions& o, std::ostream& log = std::cout) {
  const auto t0 = std::chrono::steady_clock::now();
  const Scenario s = load_scenario_with(o.scenario, o.config);
  if (s.world.panels.empty()) throw ValidationError("scenario flags no panel segments");
  const std::uint64_t seed = run_seed(s, o);
  const auto dir = ensure_dir(o.out);
  const auto map = obtain_map(s, o.map, seed);
  const Pose2 start = alignment_start_pose(s, seed);
  Simulation sim(s, map, seed, start);
  const AlignmentRun run = o.ticks ? run_alignment(sim, [](Simulation&) {}, *o.ticks) : run_alignment(sim);
  const Json report = alignment_json(s, seed, start, run);
  write_text(dir / "alignment_report.json", dump(report));
  write_text(dir / "trajectory.csv", trajectory_csv(run.log));
  write_run_info(dir, "align", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  log << "align " << s.name << " seed " << seed << ": " << to_string(run.report.final_phase) << "\n";
  return run.report.success ? 0 : static_cast<int>(ExitCode::kRuntime);
}

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> f{false};
  return f;
}

/// Runs the service. Headless mode needs --ticks and writes the delivered
/// stream to broadcast.jsonl; live mode serves clients until --ticks or a signal.
inline int cmd_serve(const CommonOptions& o, const ServeOptions& so, std::ostream& log = std::cout) {
  const Scenario s = load_scenario_with(o.scenario, o.config);
  const std::uint64_t seed = run_seed(s, o);
  if (!(so.tick_hz > 0.0)) throw ValidationError("--tick-hz must be positive");
  so.link.validate();
  if (so.headless && !o.ticks) throw ValidationError("--headless needs --ticks");
  const auto map = obtain_map(s, o.map, seed);
  std::vector<ScriptEntry> script;
  if (so.script) script = load_script(*so.script);
  ServiceConfig cfg;
  cfg.link = so.link;
  if (so.record) cfg.record_path = *so.record;
  Service service(s, map, seed, cfg);

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<std::filesystem::path> dir;
  std::ofstream stream;
  if (so.headless || !o.out.empty()) {
    dir = ensure_dir(o.out);
    stream.open(*dir / "broadcast.jsonl", std::ios::binary);
    if (!stream) throw IoError("cannot write broadcast.jsonl");
    service.add_subscriber(kLocalClient, [&stream](const std::string& line) { stream << line << '\n'; });
  } else {
    service.add_subscriber(kLocalClient, nullptr);
  }

  std::unique_ptr<NetServer> net;
  if (!so.headless) {
    net = std::make_unique<NetServer>(service);
    const int port = net->start(so.port);
    log << "listening on port " << port << std::endl;
    stop_flag() = false;
    std::signal(SIGINT, [](int) { stop_flag() = true; });
    std::signal(SIGTERM, [](int) { stop_flag() = true; });
  }

  std::size_t next = 0;
  const auto period = std::chrono::duration<double>(1.0 / so.tick_hz);
  auto deadline = std::chrono::steady_clock::now();
  while (!o.ticks || service.sim().tick_count() < *o.ticks) {
    if (stop_flag()) break;
    while (next < script.size() && script[next].tick <= service.sim().tick_count())
      service.enqueue(kLocalClient, script[next++].line);
    service.step();
    if (!so.headless) {
      deadline += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
      std::this_thread::sleep_until(deadline);
    }
  }
  if (net) net->stop();
  service.close_record();

  const Subscriber* local = service.subscriber(kLocalClient);
  if (dir) {
    const auto e = pose_errors(service.log());
    Json summary{{"experiment", "serve"},
                 {"scenario", s.name},
                 {"seed", seed},
                 {"ticks", service.sim().tick_count()},
                 {"link", to_string(so.link.mode)},
                 {"envelopes_sent", local ? local->sent : 0},
                 {"envelopes_dropped", local ? local->dropped : 0},
                 {"commands_rejected", service.rejected()},
                 {"p95_position_error", e.p95_position},
                 {"p95_heading_error_deg", rad2deg(e.p95_heading)},
                 {"lost_events", service.sim().tracker().lost_events()}};
    stream.close();
    write_text(*dir / "trajectory.csv", trajectory_csv(service.log()));
    write_text(*dir / "summary.json", dump(summary));
    write_run_info(*dir, "serve", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  log << "served " << service.sim().tick_count() << " ticks\n";
  return 0;
}

struct ReplayReport {
  std::uint64_t ticks = 0;
  std::uint64_t commands = 0;
  std::uint64_t mismatches = 0;
  bool truncated = false;
  std::size_t bad_line = 0;
  std::uint64_t last_valid_rseq = 0;
  std::string reason;
};

/// Re-runs a recorded session and checks every tick against the log.
inline ReplayReport replay_log(const Scenario& s, const std::string& log_path, std::optional<std::uint64_t> seed_flag,
                               const std::optional<std::string>& map_path, std::vector<TickRecord>* out_log) {
  std::ifstream in(log_path);
  if (!in) throw IoError("cannot open log: " + log_path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("log is empty");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::exception&) {
    throw ValidationError("log header is corrupt");
  }
  if (header.value("kind", "") != "log_header" || !header.contains("seed"))
    throw ValidationError("first log line is not a log header");
  const auto seed = header.at("seed").get<std::uint64_t>();
  if (seed_flag && *seed_flag != seed)
    throw ValidationError("log was recorded with seed " + std::to_string(seed) + ", refusing --seed " +
                          std::to_string(*seed_flag));
  if (header.value("scenario_hash", std::uint64_t{0}) != scenario_hash(s))
    throw ValidationError("log was recorded against a different scenario");

  ReplayReport rep;
  rep.last_valid_rseq = header.value("rseq", std::uint64_t{0});
  // Parse everything first; a corrupt line ends the usable log.
  struct Entry {
    bool is_tick;
    std::uint64_t tick;
    Json body;
  };
  std::vector<Entry> entries;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    Json j;
    try {
      j = Json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      const auto rseq = j.at("rseq").get<std::uint64_t>();
      if (rseq != rep.last_valid_rseq + 1) throw ValidationError("sequence gap");
      if (kind == "tick") {
        entries.push_back({true, j.at("tick").get<std::uint64_t>(), j});
      } else if (kind == "command") {
        entries.push_back({false, j.at("tick").get<std::uint64_t>(), j.at("envelope")});
      } else {
        throw ValidationError("unknown record kind " + kind);
      }
      rep.last_valid_rseq = rseq;
    } catch (const std::exception& e) {
      rep.truncated = true;
      rep.bad_line = n;
      rep.reason = e.what();
      break;
    }
  }

  const auto map = obtain_map(s, map_path, seed);
  Simulation sim(s, map, seed);
  for (const auto& e : entries) {
    if (!e.is_tick) {
      Envelope env;
      env.kind = e.body.at("kind").get<std::string>();
      env.payload = e.body.value("payload", Json::object());
      sim.apply(parse_command(env));
      ++rep.commands;
      continue;
    }
    const TickRecord r = sim.tick();
    ++rep.ticks;
    if (out_log) out_log->push_back(r);
    const auto& gt = e.body.at("gt");
    const auto& est = e.body.at("est");
    if (r.tick != e.tick || gt[0].get<double>() != r.gt.x || gt[1].get<double>() != r.gt.y ||
        gt[2].get<double>() != r.gt.theta || est[0].get<double>() != r.est.x || est[1].get<double>() != r.est.y ||
        est[2].get<double>() != r.est.theta)
      ++rep.mismatches;
  }
  return rep;
}

inline int cmd_replay(const CommonOptions& o, const std::string& log_path, std::ostream& log = std::cout) {
  const auto t0 = std::chrono::steady_clock::now();
  const Scenario s = load_scenario_with(o.scenario, o.config);
  const auto dir = ensure_dir(o.out);
  std::vector<TickRecord> records;
  const ReplayReport rep = replay_log(s, log_path, o.seed, o.map, &records);
  const auto e = pose_errors(records);
  Json j{{"experiment", "replay"},
         {"scenario", s.name},
         {"ticks_replayed", rep.ticks},
         {"commands_applied", rep.commands},
         {"state_mismatches", rep.mismatches},
         {"truncated", rep.truncated},
         {"last_valid_rseq", rep.last_valid_rseq},
         {"p95_position_error", e.p95_position},
         {"p95_heading_error_deg", rad2deg(e.p95_heading)}};
  if (rep.truncated) j["truncation"] = {{"line", rep.bad_line}, {"reason", rep.reason}};
  write_text(dir / "trajectory.csv", trajectory_csv(records));
  write_text(dir / "replay_report.json", dump(j));
  write_run_info(dir, "replay", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  if (rep.truncated)
    std::cerr << "log truncated at line " << rep.bad_line << " (" << rep.reason << "); replayed " << rep.ticks
              << " ticks up to record " << rep.last_valid_rseq << "\n";
  log << "replayed " << rep.ticks << " ticks, " << rep.mismatches << " state mismatches\n";
  return rep.mismatches == 0 ? 0 : static_cast<int>(ExitCode::kRuntime);
}

}  // namespace mobman
