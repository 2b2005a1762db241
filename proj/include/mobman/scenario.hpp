#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mobman/alignment.hpp"
#include "mobman/arm.hpp"
#include "mobman/errors.hpp"
#include "mobman/localization.hpp"
#include "mobman/navigation.hpp"
#include "mobman/world.hpp"

namespace mobman {

using Json = nlohmann::json;

struct TeleopSegment {
  Twist twist;
  double duration = 0.0;
};

using RouteStep = std::variant<WaypointGoal, TeleopSegment>;

struct OdometryNoise {
  double v_rel = 0.02;      // relative stddev on linear speed
  double omega_rel = 0.02;  // relative stddev on yaw rate
};

/// Seeded start poses for alignment experiments: the robot is placed beside
/// the panel with its camera side facing it.
struct AlignmentStartRange {
  std::size_t panel = 0;  // index into WorldModel::panels
  double distance_min = 1.0, distance_max = 3.0;
  double skew_max = deg2rad(30.0);
  double lateral_max = 0.1;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> map_seed;
  double dt = 0.05;
  WorldModel world;  // static geometry plus explicitly listed obstacles
  std::optional<WalkerParams> walkers;
  double walker_keep_out = 0.6;  // personal space kept around the robot centre, m
  Pose2 start_pose;
  LidarConfig lidar;
  DepthConfig depth;
  BaseLimits limits;
  ArmGeometry arm;
  ArmLimits arm_limits;
  JointMotionLimits arm_motion;
  double safety_margin = 0.02;
  std::vector<RouteStep> route;
  std::vector<Pose2> mapping_stations;
  double mapping_spacing = 2.0;
  double mapping_interval = 1.0;  // obstacle time between mapping stations, s
  NavConfig nav;
  IcpConfig icp;
  AlignmentConfig align;
  OdometryNoise odom;
  std::optional<AlignmentStartRange> alignment_start;
  Json source;  // the parsed document, re-emitted into logs

  std::uint64_t effective_map_seed(std::uint64_t run_seed) const {
    return map_seed.value_or(run_seed + 1000);
  }
};

/// FNV-1a over the static geometry; written into map files so a map cannot
/// silently be used against a different scenario.
inline std::uint64_t scenario_hash(const Scenario& s) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const std::string& txt) {
    for (unsigned char c : txt) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  char buf[128];
  for (const auto& seg : s.world.segments) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g;", seg.a.x, seg.a.y, seg.b.x, seg.b.y);
    feed(buf);
  }
  return h;
}

namespace detail {

inline double num(const Json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
  return j.at(key).get<double>();
}

inline Vec2 vec2(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw ValidationError("expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Pose2 pose_deg(const Json& j) {
  if (j.is_array()) {
    if (j.size() < 2 || j.size() > 3) throw ValidationError("pose must be [x, y, theta_deg]");
    return {j[0].get<double>(), j[1].get<double>(), deg2rad(j.size() == 3 ? j[2].get<double>() : 0.0)};
  }
  return {num(j, "x", 0.0), num(j, "y", 0.0), deg2rad(num(j, "theta_deg", 0.0))};
}

inline WaypointGoal waypoint(const Json& j) {
  WaypointGoal g;
  g.target = {num(j, "x", 0.0), num(j, "y", 0.0)};
  if (j.contains("theta_deg")) g.heading = deg2rad(j.at("theta_deg").get<double>());
  g.pos_tol = num(j, "pos_tol", g.pos_tol);
  g.head_tol = deg2rad(num(j, "head_tol_deg", rad2deg(g.head_tol)));
  if (!(g.pos_tol > 0.0) || !(g.head_tol > 0.0)) throw ValidationError("waypoint tolerances must be positive");
  return g;
}

template <std::size_t N>
inline void array_deg(const Json& j, const char* key, std::array<double, N>& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != N) throw ValidationError(std::string("field '") + key + "' has wrong arity");
  for (std::size_t i = 0; i < N; ++i) out[i] = deg2rad(a[i].get<double>());
}

}  // namespace detail

inline Scenario parse_scenario(const Json& j) {
  using namespace detail;
  Scenario s;
  try {
    if (!j.is_object()) throw ValidationError("scenario must be a JSON object");
    s.source = j;
    s.name = j.value("name", std::string("scenario"));
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("map_seed")) s.map_seed = j.at("map_seed").get<std::uint64_t>();
    s.dt = num(j, "dt", s.dt);
    if (!(s.dt > 0.0)) throw ValidationError("dt must be positive");

    for (const auto& seg : j.value("segments", Json::array())) {
      if (!seg.is_array() || seg.size() != 4) throw ValidationError("segment must be [x1, y1, x2, y2]");
      s.world.segments.push_back({{seg[0].get<double>(), seg[1].get<double>()},
                                  {seg[2].get<double>(), seg[3].get<double>()}});
    }
    for (const auto& p : j.value("panels", Json::array())) {
      const auto v = p.get<std::int64_t>();
      if (v < 0) throw ValidationError("panel index out of range");
      s.world.panels.push_back(static_cast<std::size_t>(v));
    }
    for (const auto& o : j.value("obstacles", Json::array())) {
      DynamicObstacle d;
      for (const auto& w : o.at("polyline")) d.waypoints.push_back(vec2(w));
      d.radius = num(o, "radius", d.radius);
      d.speed = num(o, "speed", 0.0);
      d.progress = num(o, "phase", 0.0);
      s.world.obstacles.push_back(std::move(d));
    }
    if (j.contains("walkers")) {
      const auto& w = j.at("walkers");
      WalkerParams p;
      p.count = w.value("count", p.count);
      if (w.contains("region")) {
        const auto& r = w.at("region");
        if (!r.is_array() || r.size() != 4) throw ValidationError("walkers.region must be [xmin, ymin, xmax, ymax]");
        p.region_min = {r[0].get<double>(), r[1].get<double>()};
        p.region_max = {r[2].get<double>(), r[3].get<double>()};
      }
      p.radius = num(w, "radius", p.radius);
      if (w.contains("speed")) {
        p.speed_min = w.at("speed")[0].get<double>();
        p.speed_max = w.at("speed")[1].get<double>();
      }
      if (w.contains("size")) {
        p.size_min = w.at("size")[0].get<double>();
        p.size_max = w.at("size")[1].get<double>();
      }
      p.clearance = num(w, "clearance", p.clearance);
      s.walker_keep_out = num(w, "keep_out", s.walker_keep_out);
      if (s.walker_keep_out < 0.0) throw ValidationError("walkers.keep_out must be non-negative");
      s.walkers = p;
    }
    if (j.contains("start_pose")) s.start_pose = pose_deg(j.at("start_pose"));

    if (j.contains("lidar_cfg")) {
      const auto& l = j.at("lidar_cfg");
      s.lidar.n_beams = l.value("n_beams", s.lidar.n_beams);
      s.lidar.max_range = num(l, "max_range", s.lidar.max_range);
      s.lidar.min_range = num(l, "min_range", s.lidar.min_range);
      s.lidar.occlusion_center_deg = num(l, "occlusion_center_deg", s.lidar.occlusion_center_deg);
      s.lidar.occlusion_width_deg = num(l, "occlusion_width_deg", s.lidar.occlusion_width_deg);
      s.lidar.range_noise_std = num(l, "range_noise_std", s.lidar.range_noise_std);
    }
    if (s.lidar.n_beams < 8) throw ValidationError("lidar_cfg.n_beams must be >= 8");
    if (s.lidar.occlusion_width_deg < 0.0 || s.lidar.occlusion_width_deg >= 360.0)
      throw ValidationError("lidar_cfg.occlusion_width_deg must be in [0, 360)");
    if (j.contains("depth_cfg")) {
      const auto& d = j.at("depth_cfg");
      s.depth.fov_deg = num(d, "fov_deg", s.depth.fov_deg);
      s.depth.n_rays = d.value("n_rays", s.depth.n_rays);
      s.depth.max_range = num(d, "max_range", s.depth.max_range);
      s.depth.range_noise_std = num(d, "range_noise_std", s.depth.range_noise_std);
    }
    if (j.contains("limits")) {
      const auto& l = j.at("limits");
      s.limits.a_lin = num(l, "a_lin", s.limits.a_lin);
      s.limits.a_ang = num(l, "a_ang", s.limits.a_ang);
      s.limits.v_max = num(l, "v_max", s.limits.v_max);
      s.limits.omega_max = num(l, "omega_max", s.limits.omega_max);
    }
    if (!(s.limits.a_lin > 0 && s.limits.a_ang > 0 && s.limits.v_max > 0 && s.limits.omega_max > 0))
      throw ValidationError("limits must be positive");
    if (j.contains("arm")) {
      const auto& a = j.at("arm");
      if (a.contains("link_lengths")) {
        const auto& ll = a.at("link_lengths");
        if (!ll.is_array() || ll.size() != 3) throw ValidationError("arm.link_lengths needs 3 values");
        for (std::size_t i = 0; i < 3; ++i) s.arm.link_lengths[i] = ll[i].get<double>();
      }
      s.arm.mass_arm = num(a, "mass_arm", s.arm.mass_arm);
      s.arm.mass_base = num(a, "mass_base", s.arm.mass_base);
      s.arm.payload = num(a, "payload", s.arm.payload);
      s.arm.mount_height = num(a, "mount_height", s.arm.mount_height);
      if (a.contains("mount_offset")) s.arm.mount_offset = vec2(a.at("mount_offset"));
      if (a.contains("footprint_half")) s.arm.footprint_half = vec2(a.at("footprint_half"));
      s.safety_margin = num(a, "safety_margin", s.safety_margin);
      s.arm_limits.max_reach = num(a, "max_reach", s.arm_limits.max_reach);
      if (a.contains("limits_deg")) {
        const auto& lim = a.at("limits_deg");
        for (std::size_t i = 0; i < ArmConfig::kJoints; ++i) {
          if (!lim.contains(kJointNames[i])) continue;
          const auto& iv = lim.at(kJointNames[i]);
          s.arm_limits.joints[i] = {deg2rad(iv[0].get<double>()), deg2rad(iv[1].get<double>())};
          if (s.arm_limits.joints[i].lo > s.arm_limits.joints[i].hi)
            throw ValidationError(std::string("arm limit for ") + kJointNames[i] + " is inverted");
        }
      }
      array_deg(a, "max_vel_deg", s.arm_motion.max_vel);
      array_deg(a, "max_accel_deg", s.arm_motion.max_accel);
    }
    s.arm.validate();
    if (!s.arm_limits.contains(travel_configuration()))
      throw ValidationError("arm limits must contain the travel configuration");

    for (const auto& r : j.value("route", Json::array())) {
      if (r.contains("teleop")) {
        const auto& t = r.at("teleop");
        s.route.push_back(TeleopSegment{{num(t, "v", 0.0), deg2rad(num(t, "omega_deg", 0.0))},
                                        num(t, "duration", 0.0)});
      } else {
        s.route.push_back(waypoint(r));
      }
    }
    if (j.contains("mapping")) {
      const auto& m = j.at("mapping");
      for (const auto& p : m.value("stations", Json::array())) s.mapping_stations.push_back(pose_deg(p));
      s.mapping_spacing = num(m, "spacing", s.mapping_spacing);
      s.mapping_interval = num(m, "interval", s.mapping_interval);
    }
    if (j.contains("navigation")) {
      const auto& n = j.at("navigation");
      s.nav.k_heading = num(n, "k_heading", s.nav.k_heading);
      s.nav.k_dist = num(n, "k_dist", s.nav.k_dist);
      s.nav.v_cruise = num(n, "v_cruise", s.nav.v_cruise);
      s.nav.omega_max = num(n, "omega_max", s.nav.omega_max);
      s.nav.front_sector_deg = num(n, "front_sector_deg", s.nav.front_sector_deg);
      s.nav.block_range = num(n, "block_range", s.nav.block_range);
      s.nav.stop_radius = num(n, "stop_radius", s.nav.stop_radius);
      s.nav.rotate_threshold = deg2rad(num(n, "rotate_threshold_deg", rad2deg(s.nav.rotate_threshold)));
    }
    if (j.contains("icp")) {
      const auto& c = j.at("icp");
      s.icp.max_iter = c.value("max_iter", s.icp.max_iter);
      s.icp.trim_fraction = num(c, "trim_fraction", s.icp.trim_fraction);
      s.icp.tol_xy = num(c, "tol_xy", s.icp.tol_xy);
      s.icp.tol_theta = num(c, "tol_theta", s.icp.tol_theta);
      s.icp.gate_radius = num(c, "gate_radius", s.icp.gate_radius);
      s.icp.rms_accept = num(c, "rms_accept", s.icp.rms_accept);
      s.icp.min_inlier_fraction = num(c, "min_inlier_fraction", s.icp.min_inlier_fraction);
    }
    if (s.icp.trim_fraction < 0.0 || s.icp.trim_fraction >= 1.0)
      throw ValidationError("icp.trim_fraction must be in [0, 1)");
    if (j.contains("alignment")) {
      const auto& a = j.at("alignment");
      s.align.standoff = num(a, "standoff", s.align.standoff);
      s.align.tol_d = num(a, "tol_d", s.align.tol_d);
      s.align.tol_a = deg2rad(num(a, "tol_a_deg", rad2deg(s.align.tol_a)));
      s.align.tol_a_arm = deg2rad(num(a, "tol_a_arm_deg", rad2deg(s.align.tol_a_arm)));
      s.align.phase_timeout = num(a, "phase_timeout", s.align.phase_timeout);
      s.align.fit.ransac_iters = a.value("ransac_iters", s.align.fit.ransac_iters);
      s.align.fit.inlier_threshold = num(a, "inlier_threshold", s.align.fit.inlier_threshold);
      s.align.fit.min_inliers = a.value("min_inliers", s.align.fit.min_inliers);
      if (a.contains("random_start")) {
        const auto& r = a.at("random_start");
        AlignmentStartRange st;
        st.panel = r.value("panel", std::size_t{0});
        if (r.contains("distance")) {
          st.distance_min = r.at("distance")[0].get<double>();
          st.distance_max = r.at("distance")[1].get<double>();
        }
        st.skew_max = deg2rad(num(r, "skew_deg", rad2deg(st.skew_max)));
        st.lateral_max = num(r, "lateral", st.lateral_max);
        s.alignment_start = st;
      }
    }
    s.align.a_lin = s.limits.a_lin;
    s.align.a_ang = s.limits.a_ang;
    if (j.contains("odometry")) {
      const auto& o = j.at("odometry");
      s.odom.v_rel = num(o, "v_noise", s.odom.v_rel);
      s.odom.omega_rel = num(o, "omega_noise", s.odom.omega_rel);
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("scenario: ") + e.what());
  }
  s.world.validate();
  if (s.alignment_start && s.alignment_start->panel >= s.world.panels.size())
    throw ValidationError("alignment.random_start.panel out of range");
  if (!s.start_pose.finite()) throw ValidationError("start_pose must be finite");
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario: " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ValidationError("scenario " + path + ": " + e.what());
  }
  return parse_scenario(j);
}

/// Static geometry plus seeded walkers for one run.
inline WorldModel instantiate_world(const Scenario& s, std::uint64_t seed) {
  WorldModel w = s.world;
  if (s.walkers) {
    Rng rng(seed);
    Rng walker_rng = rng.fork(1);
    populate_walkers(w, *s.walkers, walker_rng);
  }
  return w;
}

/// Seeded start pose beside the chosen panel, camera side toward it.
inline Pose2 alignment_start_pose(const Scenario& s, std::uint64_t seed) {
  if (!s.alignment_start) return s.start_pose;
  const auto& range = *s.alignment_start;
  const Segment& panel = s.world.segments[s.world.panels[range.panel]];
  Rng rng = Rng(seed).fork(7);
  const double d = rng.uniform(range.distance_min, range.distance_max);
  const double skew = rng.uniform(-range.skew_max, range.skew_max);
  const double lat = rng.uniform(-range.lateral_max, range.lateral_max);
  const Vec2 along = (panel.b - panel.a) * (1.0 / panel.length());
  Vec2 n = rotate(along, kPi / 2.0);
  // Put the robot on the side of the panel facing the start pose hint.
  if (dot(n, s.start_pose.position() - panel.midpoint()) < 0.0) n = -n;
  const Vec2 pos = panel.midpoint() + n * d + along * lat;
  // Heading such that the camera (at -90 degrees) looks back toward the panel.
  const double to_panel = std::atan2(-n.y, -n.x);
  return {pos.x, pos.y, to_panel - s.align.camera_offset + skew};
}

/// Mapping stations: explicit list, else samples along the route polyline
/// every mapping_spacing metres, each taken facing both ways so the
/// occluded rear sector is covered.
inline std::vector<Pose2> mapping_stations(const Scenario& s) {
  if (!s.mapping_stations.empty()) return s.mapping_stations;
  std::vector<Vec2> poly{s.start_pose.position()};
  for (const auto& step : s.route)
    if (const auto* g = std::get_if<WaypointGoal>(&step)) poly.push_back(g->target);
  std::vector<Pose2> out;
  if (poly.size() < 2) {
    out.push_back(s.start_pose);
    out.push_back(s.start_pose.compose({0, 0, kPi}));
    return out;
  }
  double next = 0.0, walked = 0.0;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const Vec2 a = poly[i], b = poly[i + 1];
    const double len = (b - a).norm();
    if (len <= 0.0) continue;
    const double heading = std::atan2(b.y - a.y, b.x - a.x);
    while (next <= walked + len) {
      const Vec2 p = a + (b - a) * ((next - walked) / len);
      out.push_back({p.x, p.y, heading});
      out.push_back({p.x, p.y, heading + kPi});
      next += s.mapping_spacing;
    }
    walked += len;
  }
  return out;
}

/// Mapping pass with ground-truth poses in a separately seeded world, so
/// the reference map carries different walker clutter than the run.
inline ReferenceMap build_map_for(const Scenario& s, std::uint64_t map_seed) {
  WorldModel world = instantiate_world(s, map_seed);
  Rng noise = Rng(map_seed).fork(2);
  std::vector<PosedScan> scans;
  const auto stations = mapping_stations(s);
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::round(s.mapping_interval / s.dt)));
  for (const auto& pose : stations) {
    scans.push_back({lidar_scan(world, pose, s.lidar, &noise), pose});
    for (std::size_t k = 0; k < steps; ++k)
      world = advance_obstacles(std::move(world), s.dt, {{pose.position(), s.walker_keep_out}});
  }
  return build_reference_map(scans);
}

}  // namespace mobman
