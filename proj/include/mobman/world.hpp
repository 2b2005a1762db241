#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mobman/errors.hpp"
#include "mobman/geometry.hpp"
#include "mobman/rng.hpp"

namespace mobman {

struct Twist {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
  bool operator==(const Twist&) const = default;
  bool is_zero() const { return v == 0.0 && omega == 0.0; }
};

struct BaseLimits {
  double a_lin = 0.5;      // m/s^2
  double a_ang = 1.0;      // rad/s^2
  double v_max = 1.0;      // m/s
  double omega_max = 1.0;  // rad/s
};

// Linear discharge between the full and empty pack voltages over one charge.
inline constexpr double kBatteryFullVolts = 29.4;
inline constexpr double kBatteryEmptyVolts = 25.6;
inline constexpr double kBatteryLifeSeconds = 6000.0;

/// Pack voltage after `elapsed` seconds of operation, floored at empty.
inline double battery_voltage(double elapsed) {
  const double frac = std::clamp(elapsed / kBatteryLifeSeconds, 0.0, 1.0);
  return std::lerp(kBatteryFullVolts, kBatteryEmptyVolts, frac);
}

struct BatteryState {
  double voltage = kBatteryFullVolts;
  double elapsed = 0.0;
  bool exhausted() const { return voltage <= kBatteryEmptyVolts; }
};

inline BatteryState advance_battery(BatteryState b, double dt) {
  b.elapsed += dt;
  b.voltage = std::min(b.voltage, battery_voltage(b.elapsed));
  return b;
}

struct BaseState {
  Pose2 pose;
  Twist twist;
  BatteryState battery;
};

/// Pose increment of a unicycle driven at constant (v, omega) for dt.
inline Pose2 unicycle_delta(double v, double omega, double dt) {
  const double dth = omega * dt;
  if (std::abs(dth) < 1e-12) return {v * dt, 0.0, dth};
  const double r = v / omega;
  return {r * std::sin(dth), r * (1.0 - std::cos(dth)), dth};
}

/// Advances the base one step. The achieved twist moves from the current
/// twist toward `cmd` by at most a*dt, then is capped at the speed limits.
inline BaseState step_base(const BaseState& state, const Twist& cmd, double dt,
                           const BaseLimits& limits) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("step_base: dt must be positive");
  if (!std::isfinite(cmd.v) || !std::isfinite(cmd.omega))
    throw ValidationError("step_base: non-finite command");
  if (!state.pose.finite() || !std::isfinite(state.twist.v) || !std::isfinite(state.twist.omega))
    throw ValidationError("step_base: non-finite state");
  if (!(limits.a_lin > 0.0 && limits.a_ang > 0.0 && limits.v_max > 0.0 && limits.omega_max > 0.0))
    throw ValidationError("step_base: limits must be positive");

  const Twist& cur = state.twist;
  Twist next;
  next.v = std::clamp(cmd.v, cur.v - limits.a_lin * dt, cur.v + limits.a_lin * dt);
  next.v = std::clamp(next.v, -limits.v_max, limits.v_max);
  next.omega = std::clamp(cmd.omega, cur.omega - limits.a_ang * dt, cur.omega + limits.a_ang * dt);
  next.omega = std::clamp(next.omega, -limits.omega_max, limits.omega_max);

  BaseState out;
  out.pose = state.pose.compose(unicycle_delta(next.v, next.omega, dt));
  out.twist = next;
  out.battery = advance_battery(state.battery, dt);
  return out;
}

struct DynamicObstacle {
  std::vector<Vec2> waypoints;  // closed patrol loop
  double radius = 0.25;
  double speed = 0.0;
  double progress = 0.0;  // arc length travelled along the loop
  int direction = 1;      // -1 walks the loop backwards

  double perimeter() const {
    double p = 0.0;
    for (std::size_t i = 0; i < waypoints.size(); ++i)
      p += (waypoints[(i + 1) % waypoints.size()] - waypoints[i]).norm();
    return p;
  }

  Vec2 center() const {
    if (waypoints.empty()) return {};
    if (waypoints.size() == 1) return waypoints.front();
    double s = progress;
    for (std::size_t i = 0; i < waypoints.size(); ++i) {
      const Vec2 a = waypoints[i], b = waypoints[(i + 1) % waypoints.size()];
      const double len = (b - a).norm();
      if (s <= len && len > 0.0) return a + (b - a) * (s / len);
      s -= len;
    }
    return waypoints.front();
  }
};

struct WorldModel {
  std::vector<Segment> segments;
  std::vector<std::size_t> panels;
  std::vector<DynamicObstacle> obstacles;

  void validate() const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      if (!std::isfinite(s.a.x) || !std::isfinite(s.a.y) || !std::isfinite(s.b.x) ||
          !std::isfinite(s.b.y))
        throw ValidationError("segment " + std::to_string(i) + " is not finite");
      if (s.length() <= 1e-9) throw ValidationError("segment " + std::to_string(i) + " is degenerate");
    }
    for (auto p : panels)
      if (p >= segments.size()) throw ValidationError("panel index out of range");
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
      const auto& o = obstacles[i];
      if (!(o.radius > 0.0)) throw ValidationError("obstacle radius must be positive");
      if (o.waypoints.empty()) throw ValidationError("obstacle has no patrol waypoints");
      if (o.speed < 0.0) throw ValidationError("obstacle speed must be non-negative");
    }
  }
};

struct KeepOut {
  Vec2 center;
  double radius = 0.0;
};

/// Moves every obstacle along its closed patrol loop by speed*dt. A walker
/// whose step would bring it closer to a keep-out disc than its own radius
/// allows stays put and turns around.
inline WorldModel advance_obstacles(WorldModel world, double dt, const std::vector<KeepOut>& keep_out = {}) {
  if (!(dt > 0.0)) throw ValidationError("advance_obstacles: dt must be positive");
  for (auto& o : world.obstacles) {
    const double per = o.perimeter();
    if (per <= 0.0 || o.speed == 0.0) continue;
    const Vec2 before = o.center();
    const double prev = o.progress;
    o.progress = std::fmod(o.progress + o.direction * o.speed * dt, per);
    if (o.progress < 0.0) o.progress += per;
    const Vec2 after = o.center();
    for (const auto& k : keep_out) {
      const double dn = (after - k.center).norm();
      if (dn < o.radius + k.radius && dn < (before - k.center).norm()) {
        o.progress = prev;
        o.direction = -o.direction;
        break;
      }
    }
  }
  return world;
}

struct WalkerParams {
  std::size_t count = 40;
  Vec2 region_min{0.0, 0.0};
  Vec2 region_max{30.0, 20.0};
  double radius = 0.25;
  double speed_min = 0.4;
  double speed_max = 1.2;
  double size_min = 0.5;  // patrol rectangle half extent
  double size_max = 3.0;
  double clearance = 0.3;  // from static segments
};

/// Appends seeded rectangular patrol walkers that keep clear of static geometry.
inline void populate_walkers(WorldModel& world, const WalkerParams& p, Rng& rng) {
  const double need = p.radius + p.clearance;
  for (std::size_t n = 0; n < p.count; ++n) {
    for (int attempt = 0; attempt < 2000; ++attempt) {
      const double hx = rng.uniform(p.size_min, p.size_max);
      const double hy = rng.uniform(p.size_min, p.size_max);
      const Vec2 c{rng.uniform(p.region_min.x + hx + need, p.region_max.x - hx - need),
                   rng.uniform(p.region_min.y + hy + need, p.region_max.y - hy - need)};
      std::vector<Vec2> loop{{c.x - hx, c.y - hy}, {c.x + hx, c.y - hy}, {c.x + hx, c.y + hy},
                             {c.x - hx, c.y + hy}};
      if (rng.bernoulli(0.5)) std::reverse(loop.begin(), loop.end());
      bool clear = true;
      for (std::size_t i = 0; i < 4 && clear; ++i) {
        const Segment edge{loop[i], loop[(i + 1) % 4]};
        for (const auto& s : world.segments) {
          if (segment_distance(edge, s) < need) {
            clear = false;
            break;
          }
        }
      }
      if (!clear) continue;
      DynamicObstacle o;
      o.waypoints = std::move(loop);
      o.radius = p.radius;
      o.speed = rng.uniform(p.speed_min, p.speed_max);
      o.progress = rng.uniform(0.0, o.perimeter());
      world.obstacles.push_back(std::move(o));
      break;
    }
  }
}

struct LidarConfig {
  std::size_t n_beams = 720;
  double max_range = 30.0;
  double min_range = 0.05;
  double occlusion_center_deg = 180.0;
  double occlusion_width_deg = 60.0;
  double range_noise_std = 0.0;
};

struct Scan {
  std::vector<double> angles;  // body frame, radians
  std::vector<double> ranges;  // max_range when there is no return
  std::vector<bool> valid;     // false: occluded or no return

  std::size_t size() const { return angles.size(); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
  }
  Vec2 endpoint(std::size_t i) const { return unit(angles[i]) * ranges[i]; }
};

inline double beam_angle(std::size_t i, std::size_t n) {
  return -kPi + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
}

/// True when the body-frame angle falls in the occlusion sector (inclusive).
inline bool is_occluded(double body_angle, const LidarConfig& cfg) {
  if (cfg.occlusion_width_deg <= 0.0) return false;
  const double off = std::abs(wrap_angle(body_angle - deg2rad(cfg.occlusion_center_deg)));
  return off <= deg2rad(cfg.occlusion_width_deg) * 0.5 + 1e-9;
}

/// Nearest hit along a ray against segments and obstacle discs.
inline std::optional<double> raycast(const WorldModel& world, Vec2 origin, Vec2 dir,
                                     double max_range) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : world.segments)
    if (auto t = ray_segment(origin, dir, s); t && *t < best) best = *t;
  for (const auto& o : world.obstacles)
    if (auto t = ray_disc(origin, dir, o.center(), o.radius); t && *t < best) best = *t;
  if (best > max_range) return std::nullopt;
  return best;
}

inline Scan lidar_scan(const WorldModel& world, const Pose2& pose, const LidarConfig& cfg,
                       Rng* noise = nullptr) {
  if (cfg.n_beams < 8) throw ValidationError("lidar_scan: need at least 8 beams");
  if (cfg.occlusion_width_deg < 0.0 || cfg.occlusion_width_deg >= 360.0)
    throw ValidationError("lidar_scan: occlusion width must be in [0, 360)");
  Scan scan;
  scan.angles.resize(cfg.n_beams);
  scan.ranges.resize(cfg.n_beams);
  scan.valid.resize(cfg.n_beams);
  const Vec2 origin = pose.position();
  for (std::size_t i = 0; i < cfg.n_beams; ++i) {
    const double a = beam_angle(i, cfg.n_beams);
    scan.angles[i] = a;
    const auto hit = raycast(world, origin, unit(pose.theta + a), cfg.max_range);
    double r = hit.value_or(cfg.max_range);
    bool ok = hit.has_value() && r >= cfg.min_range;
    if (ok && noise && cfg.range_noise_std > 0.0)
      r = std::clamp(r + noise->normal(0.0, cfg.range_noise_std), cfg.min_range, cfg.max_range);
    if (!ok) r = cfg.max_range;
    scan.ranges[i] = r;
    scan.valid[i] = ok && !is_occluded(a, cfg);
  }
  return scan;
}

struct DepthConfig {
  double fov_deg = 87.0;
  std::size_t n_rays = 240;
  double max_range = 4.0;
  double range_noise_std = 0.0;
};

/// Depth fan from the wrist camera. Points are in the camera frame,
/// x forward along the optical axis and y to the left. Misses are omitted.
inline std::vector<Vec2> depth_scan(const WorldModel& world, const Pose2& camera,
                                    const DepthConfig& cfg, Rng* noise = nullptr) {
  if (!(cfg.fov_deg > 0.0 && cfg.fov_deg <= 120.0))
    throw ValidationError("depth_scan: fov must be in (0, 120] degrees");
  std::vector<Vec2> pts;
  const double fov = deg2rad(cfg.fov_deg);
  const std::size_t n = std::max<std::size_t>(cfg.n_rays, 2);
  for (std::size_t j = 0; j < n; ++j) {
    const double a = -fov / 2.0 + fov * static_cast<double>(j) / static_cast<double>(n - 1);
    const auto hit = raycast(world, camera.position(), unit(camera.theta + a), cfg.max_range);
    if (!hit || *hit <= 0.0) continue;
    double r = *hit;
    if (noise && cfg.range_noise_std > 0.0) r += noise->normal(0.0, cfg.range_noise_std);
    pts.push_back(unit(a) * r);
  }
  return pts;
}

/// Clearance of the base footprint to the static geometry.
inline double footprint_clearance(const WorldModel& world, const Pose2& pose, Vec2 half) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : world.segments) best = std::min(best, rectangle_segment_clearance(pose, half, s));
  return best;
}

}  // namespace mobman
