#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "mobman/geometry.hpp"
#include "mobman/world.hpp"

namespace mobman {

struct WaypointGoal {
  Vec2 target;
  std::optional<double> heading;  // radians; none means any final heading
  double pos_tol = 0.15;
  double head_tol = 0.1;
};

enum class NavPhase { kRotateToGoal, kDrive, kFinalRotate, kDone, kBlocked };

inline const char* to_string(NavPhase p) {
  switch (p) {
    case NavPhase::kRotateToGoal: return "rotate_to_goal";
    case NavPhase::kDrive: return "drive";
    case NavPhase::kFinalRotate: return "final_rotate";
    case NavPhase::kDone: return "done";
    case NavPhase::kBlocked: return "blocked";
  }
  return "?";
}

struct NavStatus {
  NavPhase phase = NavPhase::kRotateToGoal;
  double distance_remaining = 0.0;
};

struct NavConfig {
  double k_heading = 1.5;
  double k_dist = 0.8;
  double v_cruise = 0.6;
  double omega_max = 1.0;
  double rotate_threshold = deg2rad(60.0);
  double front_sector_deg = 60.0;
  double block_range = 0.5;
  // Linear speed ramps down from v_cruise at stop_radius to zero at block_range.
  double stop_radius = 1.5;
};

/// Shortest valid return inside the frontal sector, +inf when clear.
inline double frontal_range(const Scan& scan, double front_sector_deg) {
  const double half = deg2rad(front_sector_deg) * 0.5 + 1e-9;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scan.size(); ++i)
    if (scan.valid[i] && std::abs(scan.angles[i]) <= half) best = std::min(best, scan.ranges[i]);
  return best;
}

/// Proportional waypoint controller with stop-and-wait obstacle guard.
inline std::pair<Twist, NavStatus> nav_step(const Pose2& pose, const WaypointGoal& goal,
                                            const Scan& scan, const NavConfig& cfg) {
  NavStatus st;
  const Vec2 to_goal = goal.target - pose.position();
  st.distance_remaining = to_goal.norm();
  auto turn = [&](double err) {
    return std::clamp(cfg.k_heading * err, -cfg.omega_max, cfg.omega_max);
  };

  if (st.distance_remaining <= goal.pos_tol) {
    if (goal.heading) {
      const double err = wrap_angle(*goal.heading - pose.theta);
      if (std::abs(err) > goal.head_tol) {
        st.phase = NavPhase::kFinalRotate;
        return {{0.0, turn(err)}, st};
      }
    }
    st.phase = NavPhase::kDone;
    return {{0.0, 0.0}, st};
  }

  const double heading_err = wrap_angle(std::atan2(to_goal.y, to_goal.x) - pose.theta);
  if (std::abs(heading_err) > cfg.rotate_threshold) {
    st.phase = NavPhase::kRotateToGoal;
    return {{0.0, turn(heading_err)}, st};
  }

  // Guard only applies when the base is about to translate.
  const double front = frontal_range(scan, cfg.front_sector_deg);
  if (front < cfg.block_range) {
    st.phase = NavPhase::kBlocked;
    return {{0.0, 0.0}, st};
  }
  double v = std::min(cfg.v_cruise, cfg.k_dist * st.distance_remaining);
  if (cfg.stop_radius > cfg.block_range && front < cfg.stop_radius)
    v = std::min(v, cfg.v_cruise * (front - cfg.block_range) / (cfg.stop_radius - cfg.block_range));
  st.phase = NavPhase::kDrive;
  return {{v, turn(heading_err)}, st};
}

}  // namespace mobman
