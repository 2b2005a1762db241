#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <utility>

#include "mobman/errors.hpp"
#include "mobman/geometry.hpp"

namespace mobman {

/// Planar reduction of the six-joint arm: a yaw joint at the base, three
/// pitch joints in the vertical plane, and a camera pan at the wrist.
struct ArmConfig {
  double base_yaw = 0.0;
  double shoulder = 0.0;
  double elbow = 0.0;
  double wrist_pitch = 0.0;
  double wrist_yaw = 0.0;

  static constexpr std::size_t kJoints = 5;

  std::array<double, kJoints> as_array() const {
    return {base_yaw, shoulder, elbow, wrist_pitch, wrist_yaw};
  }
  static ArmConfig from_array(const std::array<double, kJoints>& q) {
    return {q[0], q[1], q[2], q[3], q[4]};
  }
  bool operator==(const ArmConfig&) const = default;
};

inline constexpr std::array<const char*, ArmConfig::kJoints> kJointNames = {
    "base_yaw", "shoulder", "elbow", "wrist_pitch", "wrist_yaw"};

struct JointInterval {
  double lo = -kPi;
  double hi = kPi;
  bool contains(double q) const { return q >= lo && q <= hi; }
};

struct ArmLimits {
  std::array<JointInterval, ArmConfig::kJoints> joints{{
      {deg2rad(-180.0), deg2rad(180.0)},
      {deg2rad(-10.0), deg2rad(170.0)},
      {deg2rad(-150.0), deg2rad(150.0)},
      {deg2rad(-120.0), deg2rad(120.0)},
      {deg2rad(-180.0), deg2rad(180.0)},
  }};
  double max_reach = 0.891;

  bool contains(const ArmConfig& c) const {
    const auto q = c.as_array();
    for (std::size_t i = 0; i < q.size(); ++i)
      if (!joints[i].contains(q[i])) return false;
    return true;
  }
};

struct JointMotionLimits {
  std::array<double, ArmConfig::kJoints> max_vel{0.8, 0.8, 0.8, 1.0, 1.0};    // rad/s
  std::array<double, ArmConfig::kJoints> max_accel{1.0, 1.0, 1.0, 1.5, 1.5};  // rad/s^2
};

struct ArmGeometry {
  std::array<double, 3> link_lengths{0.30, 0.30, 0.291};
  double mass_arm = 7.0;
  double mass_base = 17.0;
  double payload = 0.0;
  Vec2 mount_offset{0.0, 0.0};     // arm base relative to footprint center
  Vec2 footprint_half{0.254, 0.215};
  double mount_height = 0.35;

  double total_length() const {
    return std::accumulate(link_lengths.begin(), link_lengths.end(), 0.0);
  }
  void validate() const {
    for (double l : link_lengths)
      if (!(l > 0.0)) throw ValidationError("arm link lengths must be positive");
    if (!(mass_arm > 0.0) || !(mass_base > 0.0)) throw ValidationError("masses must be positive");
    if (payload < 0.0) throw ValidationError("payload must be non-negative");
    if (!(footprint_half.x > 0.0) || !(footprint_half.y > 0.0))
      throw ValidationError("footprint must have positive extents");
  }
};

/// Shape of the chain in its vertical plane: signed horizontal extension of
/// each joint from the arm base, and each joint's height above the mount.
struct ChainProfile {
  std::array<double, 4> horizontal{};  // base, elbow, wrist, tip
  std::array<double, 4> height{};
  std::array<double, 3> pitch{};       // accumulated absolute pitch per link

  double reach() const { return horizontal[3]; }
};

inline ChainProfile chain_profile(const ArmConfig& c, const ArmGeometry& g) {
  ChainProfile p;
  const std::array<double, 3> rel{c.shoulder, c.elbow, c.wrist_pitch};
  double acc = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    acc += rel[i];
    p.pitch[i] = acc;
    p.horizontal[i + 1] = p.horizontal[i] + g.link_lengths[i] * std::cos(acc);
    p.height[i + 1] = p.height[i] + g.link_lengths[i] * std::sin(acc);
  }
  return p;
}

struct CameraPose {
  Pose2 pose;          // global planar pose of the wrist camera
  double height = 0.0; // above the floor
  double reach = 0.0;  // signed horizontal extension from the arm base
};

inline CameraPose forward_kinematics(const ArmConfig& cfg, const ArmGeometry& geom,
                                     const Pose2& base_pose, const ArmLimits& limits = {}) {
  if (!limits.contains(cfg)) throw ValidationError("forward_kinematics: joint limit violated");
  const ChainProfile prof = chain_profile(cfg, geom);
  const Vec2 local = geom.mount_offset + unit(cfg.base_yaw) * prof.reach();
  const Vec2 world = base_pose.transform(local);
  CameraPose out;
  out.pose = Pose2{world.x, world.y, base_pose.theta + cfg.base_yaw + cfg.wrist_yaw};
  out.height = geom.mount_height + prof.height[3];
  out.reach = prof.reach();
  return out;
}

/// Folded driving pose: link one level, elbow closed to its limit, and the
/// forearm angled back down to the mount plane, camera panned to the right.
/// Frozen from a sweep of the default joint box for the lowest CoM with all
/// joints at or above the mount and |reach| <= 0.25 m.
inline ArmConfig travel_configuration() {
  return {0.0, 0.0, deg2rad(150.0), deg2rad(61.0), -kPi / 2.0};
}

inline bool is_travel_configuration(const ArmConfig& c, double tol = 1e-9) {
  const auto a = c.as_array(), b = travel_configuration().as_array();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

/// Mass-weighted CoM of the arm alone (links carry mass in proportion to
/// length, concentrated at their midpoints): horizontal extension and height.
inline std::pair<double, double> arm_com_profile(const ArmConfig& c, const ArmGeometry& g) {
  const ChainProfile p = chain_profile(c, g);
  const double total = g.total_length();
  double h = 0.0, z = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double w = g.link_lengths[i] / total;
    h += w * 0.5 * (p.horizontal[i] + p.horizontal[i + 1]);
    z += w * 0.5 * (p.height[i] + p.height[i + 1]);
  }
  return {h, z};
}

struct StabilityReport {
  Vec2 com_xy;
  double margin = 0.0;  // to the nearest footprint edge, negative outside
  bool stable = false;
};

/// Combined horizontal CoM of base, arm links and wrist payload in the base frame.
inline Vec2 combined_com(const ArmConfig& c, const ArmGeometry& g) {
  const auto [arm_h, arm_z] = arm_com_profile(c, g);
  (void)arm_z;
  const double tip = chain_profile(c, g).reach();
  const Vec2 dir = unit(c.base_yaw);
  const Vec2 arm_com = g.mount_offset + dir * arm_h;
  const Vec2 payload_at = g.mount_offset + dir * tip;
  const double m = g.mass_base + g.mass_arm + g.payload;
  return (arm_com * g.mass_arm + payload_at * g.payload) * (1.0 / m);
}

inline StabilityReport check_stability(const ArmConfig& c, const ArmGeometry& g,
                                       double safety_margin = 0.02) {
  StabilityReport r;
  r.com_xy = combined_com(c, g);
  r.margin = std::min(g.footprint_half.x - std::abs(r.com_xy.x),
                      g.footprint_half.y - std::abs(r.com_xy.y));
  r.stable = r.margin >= safety_margin;
  return r;
}

/// Largest wrist payload keeping `c` stable, by bisection on the margin.
inline double max_stable_payload(const ArmConfig& c, ArmGeometry g, double safety_margin = 0.02,
                                 double upper = 1000.0) {
  g.payload = 0.0;
  if (!check_stability(c, g, safety_margin).stable) return 0.0;
  g.payload = upper;
  if (check_stability(c, g, safety_margin).stable) return upper;
  double lo = 0.0, hi = upper;
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    g.payload = 0.5 * (lo + hi);
    (check_stability(c, g, safety_margin).stable ? lo : hi) = g.payload;
  }
  return lo;
}

/// Clamps every joint into its interval; if the horizontal reach still
/// exceeds max_reach, blends the pitch joints toward the travel pose and
/// bisects on the blend factor until reach sits in [max_reach-1e-4, max_reach].
inline ArmConfig clamp_workspace(const ArmConfig& target, const ArmGeometry& geom,
                                 const ArmLimits& limits) {
  auto q = target.as_array();
  for (std::size_t i = 0; i < q.size(); ++i)
    q[i] = std::clamp(q[i], limits.joints[i].lo, limits.joints[i].hi);
  ArmConfig out = ArmConfig::from_array(q);
  auto reach = [&](const ArmConfig& c) { return chain_profile(c, geom).reach(); };
  if (reach(out) <= limits.max_reach) return out;

  ArmConfig fold = travel_configuration();
  auto fq = fold.as_array();
  for (std::size_t i = 0; i < fq.size(); ++i)
    fq[i] = std::clamp(fq[i], limits.joints[i].lo, limits.joints[i].hi);
  fold = ArmConfig::from_array(fq);

  auto blend = [&](double s) {
    ArmConfig c = out;
    c.shoulder = out.shoulder + s * (fold.shoulder - out.shoulder);
    c.elbow = out.elbow + s * (fold.elbow - out.elbow);
    c.wrist_pitch = out.wrist_pitch + s * (fold.wrist_pitch - out.wrist_pitch);
    return c;
  };
  if (reach(blend(1.0)) > limits.max_reach) return blend(1.0);
  double lo = 0.0, hi = 1.0;  // reach(lo) > max, reach(hi) <= max
  for (int i = 0; i < 200; ++i) {
    const ArmConfig c = blend(hi);
    if (reach(c) >= limits.max_reach - 1e-4) break;
    const double mid = 0.5 * (lo + hi);
    (reach(blend(mid)) > limits.max_reach ? lo : hi) = mid;
    if (hi - lo < 1e-15) break;
  }
  return blend(hi);
}

using JointVelocities = std::array<double, ArmConfig::kJoints>;

/// One step of per-joint trapezoidal motion toward `target`. Velocity follows
/// the braking curve sqrt(2*a*|error|) capped at max_vel, and changes by at
/// most max_accel*dt per step. Positions never leave the joint limits.
inline std::pair<ArmConfig, JointVelocities> step_arm(const ArmConfig& cfg, const ArmConfig& target,
                                                      double dt, const JointMotionLimits& motion,
                                                      const JointVelocities& vel,
                                                      const ArmLimits& limits = {}) {
  if (!(dt > 0.0)) throw ValidationError("step_arm: dt must be positive");
  auto q = cfg.as_array();
  const auto goal = target.as_array();
  JointVelocities w = vel;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double a = motion.max_accel[i], vmax = motion.max_vel[i];
    const double g = std::clamp(goal[i], limits.joints[i].lo, limits.joints[i].hi);
    const double e = g - q[i];
    if (std::abs(e) <= 0.5 * a * dt * dt && std::abs(w[i]) <= a * dt) {
      q[i] = g;
      w[i] = 0.0;
      continue;
    }
    // Braking curve evaluated half a step ahead so the discrete motion settles.
    const double brake = std::max(0.0, std::sqrt(2.0 * a * std::abs(e)) - 0.5 * a * dt);
    const double desired = std::copysign(std::min(vmax, brake), e);
    const double nw = std::clamp(desired, w[i] - a * dt, w[i] + a * dt);
    q[i] += 0.5 * (w[i] + nw) * dt;
    w[i] = nw;
    if (q[i] < limits.joints[i].lo || q[i] > limits.joints[i].hi) {
      q[i] = std::clamp(q[i], limits.joints[i].lo, limits.joints[i].hi);
      w[i] = 0.0;
    }
  }
  return {ArmConfig::from_array(q), w};
}

}  // namespace mobman
