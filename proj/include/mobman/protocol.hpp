#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mobman/errors.hpp"
#include "mobman/rng.hpp"
#include "mobman/simulation.hpp"

namespace mobman {

inline constexpr int kProtocolVersion = 1;

inline const std::vector<std::string>& client_kinds() {
  static const std::vector<std::string> k{"teleop", "goal", "align", "travel", "estop", "resume", "mode"};
  return k;
}

inline const std::vector<std::string>& server_kinds() {
  static const std::vector<std::string> k{"state", "event", "error", "scenario_info"};
  return k;
}

struct Envelope {
  std::uint64_t seq = 0;
  double t_sim = 0.0;
  std::string kind;
  Json payload = Json::object();
  std::size_t size_bytes = 0;  // length of the serialized line, set by serialize()
};

inline std::string serialize(Envelope& env) {
  Json j{{"v", kProtocolVersion}, {"seq", env.seq}, {"t_sim", env.t_sim}, {"kind", env.kind}, {"payload", env.payload}};
  std::string s = j.dump();
  env.size_bytes = s.size();
  return s;
}

inline Envelope parse_envelope(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("envelope must be a JSON object");
  if (!j.contains("kind") || !j.at("kind").is_string()) throw ValidationError("envelope needs a string 'kind'");
  if (j.contains("v") && j.at("v") != kProtocolVersion)
    throw ValidationError("unsupported protocol version " + j.at("v").dump());
  Envelope e;
  e.kind = j.at("kind").get<std::string>();
  if (j.contains("seq")) {
    if (!j.at("seq").is_number_unsigned()) throw ValidationError("'seq' must be a non-negative integer");
    e.seq = j.at("seq").get<std::uint64_t>();
  }
  if (j.contains("t_sim") && j.at("t_sim").is_number()) e.t_sim = j.at("t_sim").get<double>();
  if (j.contains("payload")) e.payload = j.at("payload");
  if (!e.payload.is_object()) throw ValidationError("'payload' must be an object");
  e.size_bytes = line.size();
  return e;
}

enum class LinkMode { kWired, kWireless };

inline const char* to_string(LinkMode m) { return m == LinkMode::kWired ? "wired" : "wireless"; }

inline LinkMode parse_link_mode(const std::string& s) {
  if (s == "wired") return LinkMode::kWired;
  if (s == "wireless") return LinkMode::kWireless;
  throw ValidationError("link must be 'wired' or 'wireless', got '" + s + "'");
}

struct LinkModel {
  LinkMode mode = LinkMode::kWired;
  std::size_t loss_threshold_bytes = 64 * 1024;
  double loss_prob = 0.5;

  void validate() const {
    if (!(loss_prob >= 0.0 && loss_prob <= 1.0)) throw ValidationError("loss probability must be in [0, 1]");
  }
};

/// Whether the envelope survives the link. Only oversized envelopes on the
/// wireless link draw from the rng.
inline bool transmit(const Envelope& env, const LinkModel& link, Rng& rng) {
  if (link.mode == LinkMode::kWired) return true;
  if (env.size_bytes <= link.loss_threshold_bytes) return true;
  return !rng.bernoulli(link.loss_prob);
}

namespace detail {

inline double field(const Json& p, const char* key) {
  if (!p.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  const auto& v = p.at(key);
  if (!v.is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(std::string("field '") + key + "' must be finite");
  return d;
}

inline Json round_json(double v, double scale) { return std::round(v * scale) / scale; }

}  // namespace detail

/// Decodes a client envelope into an operator command. Throws ValidationError.
inline OperatorCommand parse_command(const Envelope& env) {
  const Json& p = env.payload;
  using detail::field;
  if (env.kind == "teleop") return cmd::Teleop{{field(p, "v"), field(p, "omega")}};
  if (env.kind == "goal") {
    WaypointGoal g;
    g.target = {field(p, "x"), field(p, "y")};
    if (p.contains("theta") && !p.at("theta").is_null()) g.heading = field(p, "theta");
    if (p.contains("pos_tol")) g.pos_tol = field(p, "pos_tol");
    if (p.contains("head_tol")) g.head_tol = field(p, "head_tol");
    if (!(g.pos_tol > 0.0 && g.head_tol > 0.0)) throw ValidationError("goal tolerances must be positive");
    return cmd::SetGoal{g};
  }
  if (env.kind == "align") {
    cmd::StartAlignment a;
    if (p.contains("panel") && !p.at("panel").is_null()) {
      if (!p.at("panel").is_number_unsigned()) throw ValidationError("'panel' must be a non-negative integer");
      a.panel_hint = p.at("panel").get<std::size_t>();
    }
    return a;
  }
  if (env.kind == "travel") return cmd::TravelConfig{};
  if (env.kind == "estop") return cmd::EStop{};
  if (env.kind == "resume") return cmd::Resume{};
  if (env.kind == "mode") {
    if (!p.contains("mode") || !p.at("mode").is_string()) throw ValidationError("'mode' must be a string");
    const auto m = p.at("mode").get<std::string>();
    if (m == "manual") return cmd::SetMode{DriveMode::kManual};
    if (m == "auto") return cmd::SetMode{DriveMode::kAuto};
    throw ValidationError("mode must be 'manual' or 'auto'");
  }
  throw ValidationError("unknown command kind '" + env.kind + "'");
}

/// Inverse of parse_command, used by scripts and tests.
inline Envelope command_envelope(const OperatorCommand& c) {
  Envelope e;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, cmd::Teleop>) {
          e.kind = "teleop";
          e.payload = {{"v", v.twist.v}, {"omega", v.twist.omega}};
        } else if constexpr (std::is_same_v<T, cmd::SetGoal>) {
          e.kind = "goal";
          e.payload = {{"x", v.goal.target.x}, {"y", v.goal.target.y}, {"pos_tol", v.goal.pos_tol},
                       {"head_tol", v.goal.head_tol}};
          if (v.goal.heading) e.payload["theta"] = *v.goal.heading;
        } else if constexpr (std::is_same_v<T, cmd::StartAlignment>) {
          e.kind = "align";
          if (v.panel_hint) e.payload["panel"] = *v.panel_hint;
        } else if constexpr (std::is_same_v<T, cmd::TravelConfig>) {
          e.kind = "travel";
        } else if constexpr (std::is_same_v<T, cmd::EStop>) {
          e.kind = "estop";
        } else if constexpr (std::is_same_v<T, cmd::Resume>) {
          e.kind = "resume";
        } else {
          e.kind = "mode";
          e.payload = {{"mode", to_string(v.mode)}};
        }
      },
      c);
  return e;
}

inline Json pose_json(const Pose2& p) {
  using detail::round_json;
  return {{"x", round_json(p.x, 1e4)}, {"y", round_json(p.y, 1e4)}, {"theta", round_json(p.theta, 1e5)}};
}

/// Every stride-th beam so at most max_beams remain; invalid beams are sent
/// as null ranges.
inline Json decimated_scan(const Scan& scan, std::size_t max_beams = 180) {
  const std::size_t stride = std::max<std::size_t>(1, (scan.size() + max_beams - 1) / max_beams);
  Json ranges = Json::array();
  Json angles = Json::array();
  for (std::size_t i = 0; i < scan.size(); i += stride) {
    angles.push_back(detail::round_json(scan.angles[i], 1e4));
    if (scan.valid[i])
      ranges.push_back(detail::round_json(scan.ranges[i], 1e3));
    else
      ranges.push_back(nullptr);
  }
  return {{"angles", angles}, {"ranges", ranges}, {"stride", stride}};
}

struct PathPoint {
  Pose2 pose;
  DriveMode mode;
};

inline Json state_payload(const Simulation& sim, const std::vector<PathPoint>& path_tail) {
  using detail::round_json;
  Json arm = Json::object();
  const auto q = sim.arm().as_array();
  const auto qt = sim.arm_target().as_array();
  Json target = Json::object();
  for (std::size_t i = 0; i < ArmConfig::kJoints; ++i) {
    arm[kJointNames[i]] = round_json(q[i], 1e5);
    target[kJointNames[i]] = round_json(qt[i], 1e5);
  }
  Json path = Json::array();
  for (const auto& p : path_tail)
    path.push_back({{"x", round_json(p.pose.x, 1e4)}, {"y", round_json(p.pose.y, 1e4)}, {"mode", to_string(p.mode)}});
  const auto& est = sim.tracker().estimate();
  Json nav = {{"phase", sim.phase_label()}, {"distance", round_json(sim.nav_status().distance_remaining, 1e4)}};
  if (sim.goal())
    nav["goal"] = {{"x", sim.goal()->target.x},
                   {"y", sim.goal()->target.y},
                   {"theta", sim.goal()->heading ? Json(*sim.goal()->heading) : Json(nullptr)}};
  Json align = nullptr;
  if (sim.alignment()) {
    align = {{"phase", to_string(sim.alignment()->phase())}};
    if (const auto& r = sim.alignment_report()) {
      align["report"] = {{"success", r->success},
                         {"final_phase", to_string(r->final_phase)},
                         {"failure_reason", r->failure_reason},
                         {"est_standoff_error", round_json(r->est_standoff_error, 1e6)},
                         {"est_angular_error", round_json(r->est_angular_error, 1e6)},
                         {"arm_compensation", round_json(r->arm_compensation, 1e6)}};
    }
  }
  const CameraPose cam = sim.camera_ground_truth();
  return {{"tick", sim.tick_count()},
          {"mode", to_string(sim.mode())},
          {"estop", sim.estopped()},
          {"estimate", pose_json(sim.estimate())},
          {"ground_truth", pose_json(sim.base().pose)},
          {"commanded", {{"v", round_json(sim.last_command().v, 1e5)}, {"omega", round_json(sim.last_command().omega, 1e5)}}},
          {"achieved", {{"v", round_json(sim.base().twist.v, 1e5)}, {"omega", round_json(sim.base().twist.omega, 1e5)}}},
          {"localization",
           {{"lost", sim.tracker().lost()}, {"rms", round_json(est.rms, 1e5)}, {"inliers", round_json(est.inlier_fraction, 1e4)}}},
          {"scan", decimated_scan(sim.scan())},
          {"arm", arm},
          {"arm_target", target},
          {"camera", pose_json(cam.pose)},
          {"battery", round_json(sim.base().battery.voltage, 1e4)},
          {"nav", nav},
          {"alignment", align},
          {"path", path}};
}

/// Scenario static description; the reference map is split into chunks.
inline std::vector<Json> scenario_info_payloads(const Simulation& sim, std::size_t chunk = 2000) {
  const auto& sc = sim.scenario();
  Json segs = Json::array();
  for (const auto& s : sc.world.segments) segs.push_back({s.a.x, s.a.y, s.b.x, s.b.y});
  const auto& pts = sim.map().points();
  const std::size_t chunks = std::max<std::size_t>(1, (pts.size() + chunk - 1) / chunk);
  std::vector<Json> out;
  for (std::size_t c = 0; c < chunks; ++c) {
    Json mp = Json::array();
    for (std::size_t i = c * chunk; i < std::min(pts.size(), (c + 1) * chunk); ++i)
      mp.push_back({detail::round_json(pts[i].x, 1e3), detail::round_json(pts[i].y, 1e3)});
    Json p = {{"chunk", c}, {"chunks", chunks}, {"map", mp}};
    if (c == 0) {
      p["name"] = sc.name;
      p["seed"] = sim.seed();
      p["dt"] = sc.dt;
      p["segments"] = segs;
      p["panels"] = sc.world.panels;
      p["footprint_half"] = {sc.arm.footprint_half.x, sc.arm.footprint_half.y};
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline Json event_payload(const SimEvent& e) {
  return {{"tick", e.tick}, {"kind", e.kind}, {"text", e.text}};
}

}  // namespace mobman
