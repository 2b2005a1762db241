#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mobman/alignment.hpp"
#include "mobman/arm.hpp"
#include "mobman/localization.hpp"
#include "mobman/navigation.hpp"
#include "mobman/rng.hpp"
#include "mobman/scenario.hpp"
#include "mobman/world.hpp"

namespace mobman {

enum class DriveMode { kManual, kAuto };

inline const char* to_string(DriveMode m) { return m == DriveMode::kManual ? "manual" : "auto"; }

namespace cmd {
struct Teleop {
  Twist twist;
};
struct SetGoal {
  WaypointGoal goal;
};
struct StartAlignment {
  std::optional<std::size_t> panel_hint;
};
struct TravelConfig {};
struct EStop {};
struct Resume {};
struct SetMode {
  DriveMode mode = DriveMode::kManual;
};
}  // namespace cmd

using OperatorCommand = std::variant<cmd::Teleop, cmd::SetGoal, cmd::StartAlignment, cmd::TravelConfig,
                                     cmd::EStop, cmd::Resume, cmd::SetMode>;

struct SimEvent {
  std::uint64_t tick = 0;
  double t = 0.0;
  std::string kind;
  std::string text;
};

struct TickRecord {
  std::uint64_t tick = 0;
  double t = 0.0;
  Pose2 gt;
  Pose2 est;
  Twist commanded;
  Twist achieved;
  std::string phase;
  DriveMode mode = DriveMode::kManual;
  bool estop = false;
  bool lost = false;
  bool matched = false;  // this tick's scan match converged
  double icp_rms = 0.0;
  double inlier_fraction = 0.0;
  ArmConfig arm;
  ArmConfig arm_target;
  double battery = kBatteryFullVolts;
};

struct AlignmentReport {
  AlignmentPhase final_phase = AlignmentPhase::kFitPanel;
  bool success = false;
  std::string failure_reason;
  double standoff_error = 0.0;      // ground truth, m
  double angular_error = 0.0;       // base vs panel-parallel, ground truth, rad
  double lateral_error = 0.0;       // base foot point vs panel midpoint along the panel, m
  double arm_compensation = 0.0;    // wrist yaw change, rad
  double camera_angle_error = 0.0;  // camera axis vs panel normal after compensation, rad
  double est_standoff_error = 0.0;
  double est_angular_error = 0.0;
  std::optional<std::size_t> panel_segment;
  std::vector<PhaseEntry> phases_log;
  std::size_t panel_freezes = 0;
};

/// Ground-truth alignment errors against the flagged panel that best matches
/// the frozen line.
inline void fill_ground_truth(AlignmentReport& r, const AlignmentController& ctl, const WorldModel& world,
                              const Pose2& gt_base, const Pose2& gt_camera) {
  const auto& line = ctl.panel();
  if (!line) return;
  double best = std::numeric_limits<double>::infinity();
  for (auto idx : world.panels) {
    const Segment& s = world.segments[idx];
    const Vec2 along = (s.b - s.a) * (1.0 / s.length());
    Vec2 n = rotate(along, kPi / 2.0);
    if (dot(n, line->normal) < 0.0) n = -n;
    const double score = std::abs(std::asin(std::clamp(cross(n, line->normal), -1.0, 1.0))) +
                         std::abs(dot(n, s.midpoint()) - line->offset);
    if (score < best) {
      best = score;
      r.panel_segment = idx;
    }
  }
  if (!r.panel_segment) return;
  const Segment& s = world.segments[*r.panel_segment];
  const Vec2 along = (s.b - s.a) * (1.0 / s.length());
  Vec2 n = rotate(along, kPi / 2.0);
  if (dot(n, line->normal) < 0.0) n = -n;
  const double dist = dot(n, s.a) - dot(n, gt_base.position());
  r.standoff_error = dist - ctl.config().standoff;
  const double parallel = std::atan2(n.y, n.x) - ctl.config().camera_offset;
  r.angular_error = wrap_angle(gt_base.theta - parallel);
  r.lateral_error = dot(gt_base.position() - s.midpoint(), along);
  r.camera_angle_error = wrap_angle(gt_camera.theta - std::atan2(n.y, n.x));
}

/// Owns one simulated robot: world stepping, base and arm motion, sensing,
/// localization, and the navigation and alignment controllers. Advanced by
/// exactly one caller; commands take effect on the next tick().
class Simulation {
 public:
  Simulation(const Scenario& scenario, std::shared_ptr<const ReferenceMap> map, std::uint64_t seed,
             std::optional<Pose2> start = std::nullopt)
      : sc_(scenario), map_(std::move(map)), seed_(seed) {
    if (!map_ || map_->empty()) throw ValidationError("simulation needs a non-empty reference map");
    world_ = instantiate_world(sc_, seed);
    Rng root(seed);
    lidar_rng_ = root.fork(2);
    odom_rng_ = root.fork(3);
    depth_rng_ = root.fork(4);
    base_.pose = start.value_or(sc_.start_pose);
    arm_ = travel_configuration();
    arm_target_ = arm_;
    arm_vel_.fill(0.0);
    tracker_ = Tracker(map_.get(), base_.pose, sc_.icp);
    scan_ = lidar_scan(world_, base_.pose, sc_.lidar, &lidar_rng_);
    tracker_.update(Pose2{}, scan_);
    est_ = tracker_.estimate().pose;
  }

  const Scenario& scenario() const { return sc_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t tick_count() const { return tick_; }
  double time() const { return t_; }
  const BaseState& base() const { return base_; }
  const Pose2& estimate() const { return est_; }
  const Scan& scan() const { return scan_; }
  const WorldModel& world() const { return world_; }
  WorldModel& mutable_world() { return world_; }
  const ArmConfig& arm() const { return arm_; }
  const ArmConfig& arm_target() const { return arm_target_; }
  const Tracker& tracker() const { return tracker_; }
  const ReferenceMap& map() const { return *map_; }
  DriveMode mode() const { return mode_; }
  bool estopped() const { return estop_; }
  const std::optional<WaypointGoal>& goal() const { return goal_; }
  const NavStatus& nav_status() const { return nav_status_; }
  const std::optional<AlignmentController>& alignment() const { return align_; }
  const std::optional<AlignmentReport>& alignment_report() const { return align_report_; }
  const std::vector<SimEvent>& events() const { return events_; }
  const Twist& last_command() const { return cmd_; }

  CameraPose camera_ground_truth() const {
    return forward_kinematics(arm_, sc_.arm, base_.pose, sc_.arm_limits);
  }

  void apply(const OperatorCommand& command) {
    std::visit([this](const auto& c) { handle(c); }, command);
  }

  TickRecord tick() {
    const double dt = sc_.dt;
    Twist command = decide();

    // The base only moves with the arm stowed; anything else first returns
    // the arm to travel configuration while the base holds.
    if (!command.is_zero()) {
      if (!is_travel_configuration(arm_target_)) {
        arm_target_ = travel_configuration();
        event("arm", "stowing arm before base motion");
      }
      if (!arm_stowed()) command = {};
    }
    command.v = std::clamp(command.v, -sc_.limits.v_max, sc_.limits.v_max);
    command.omega = std::clamp(command.omega, -sc_.limits.omega_max, sc_.limits.omega_max);
    cmd_ = command;

    base_ = step_base(base_, command, dt, sc_.limits);
    if (!estop_) {
      auto [next, vel] = step_arm(arm_, arm_target_, dt, sc_.arm_motion, arm_vel_, sc_.arm_limits);
      arm_ = next;
      arm_vel_ = vel;
    }
    world_ = advance_obstacles(std::move(world_), dt, {{base_.pose.position(), sc_.walker_keep_out}});
    scan_ = lidar_scan(world_, base_.pose, sc_.lidar, &lidar_rng_);

    const Pose2 odom = noisy_odometry(base_.twist, dt);
    const bool was_lost = tracker_.lost();
    tracker_.update(odom, scan_);
    est_ = tracker_.estimate().pose;
    if (tracker_.lost() && !was_lost) event("localization", "tracking lost: " + tracker_.last_error());

    ++tick_;
    t_ = static_cast<double>(tick_) * dt;

    TickRecord r;
    r.tick = tick_;
    r.t = t_;
    r.gt = base_.pose;
    r.est = est_;
    r.commanded = cmd_;
    r.achieved = base_.twist;
    r.phase = phase_label();
    r.mode = mode_;
    r.estop = estop_;
    r.lost = tracker_.lost();
    r.matched = tracker_.matched_last_update();
    r.icp_rms = tracker_.estimate().rms;
    r.inlier_fraction = tracker_.estimate().inlier_fraction;
    r.arm = arm_;
    r.arm_target = arm_target_;
    r.battery = base_.battery.voltage;
    return r;
  }

  std::string phase_label() const {
    if (estop_) return "estop";
    if (align_) return to_string(align_->phase());
    if (mode_ == DriveMode::kManual) return "teleop";
    if (goal_ || nav_status_.phase == NavPhase::kDone) return to_string(nav_status_.phase);
    return "idle";
  }

 private:
  bool arm_stowed() const {
    const auto q = arm_.as_array(), g = travel_configuration().as_array();
    for (std::size_t i = 0; i < q.size(); ++i)
      if (std::abs(q[i] - g[i]) > 1e-3 || arm_vel_[i] != 0.0) return false;
    return true;
  }

  bool arm_at_target() const {
    const auto q = arm_.as_array(), g = arm_target_.as_array();
    for (std::size_t i = 0; i < q.size(); ++i)
      if (std::abs(q[i] - g[i]) > 1e-9 || arm_vel_[i] != 0.0) return false;
    return true;
  }

  Pose2 noisy_odometry(const Twist& tw, double dt) {
    const double v = tw.v * (1.0 + odom_rng_.normal(0.0, sc_.odom.v_rel));
    const double w = tw.omega * (1.0 + odom_rng_.normal(0.0, sc_.odom.omega_rel));
    return unicycle_delta(v, w, dt);
  }

  Twist decide() {
    if (estop_) return {};
    if (mode_ == DriveMode::kManual) {
      if (t_ - teleop_time_ > kTeleopTimeout + 1e-9) return {};
      return teleop_;
    }
    if (align_) return alignment_tick();
    if (goal_) {
      auto [tw, st] = nav_step(est_, *goal_, scan_, sc_.nav);
      nav_status_ = st;
      if (st.phase == NavPhase::kDone) {
        event("goal", "goal reached");
        goal_.reset();
      }
      return tw;
    }
    return {};
  }

  Twist alignment_tick() {
    AlignmentController& ctl = *align_;
    if (ctl.finished()) return {};
    AlignmentInput in;
    in.t = t_;
    in.base_est = est_;
    in.measured = base_.twist;
    in.camera_est = forward_kinematics(arm_, sc_.arm, est_, sc_.arm_limits).pose;
    in.localization_ok = !tracker_.lost();
    in.arm_at_target = arm_at_target();
    if (ctl.wants_fit()) {
      const auto pts = depth_scan(world_, camera_ground_truth().pose, sc_.depth, &depth_rng_);
      PanelFitConfig fc = sc_.align.fit;
      fc.seed = seed_ ^ (0x5bd1e995ULL * (ctl.log().size() + 1));
      try {
        in.fit = fit_panel(pts, fc);
      } catch (const NoPanelError&) {
        in.fit.reset();
      }
    }
    const AlignmentPhase before = ctl.phase();
    AlignmentCommand out = ctl.step(in);
    if (out.wrist_yaw_delta) {
      ArmConfig target = arm_target_;
      target.wrist_yaw += *out.wrist_yaw_delta;
      arm_target_ = clamp_workspace(target, sc_.arm, sc_.arm_limits);
    }
    if (ctl.phase() != before) event("alignment", std::string("phase ") + to_string(ctl.phase()));
    if (ctl.finished()) {
      AlignmentReport rep;
      rep.final_phase = ctl.phase();
      rep.success = ctl.phase() == AlignmentPhase::kDone;
      rep.failure_reason = ctl.failure_reason();
      rep.arm_compensation = ctl.arm_compensation();
      rep.phases_log = ctl.log();
      rep.panel_freezes = ctl.panel_freezes();
      if (ctl.panel()) {
        rep.est_standoff_error = ctl.panel()->distance_from(est_.position()) - ctl.config().standoff;
        rep.est_angular_error = wrap_angle(est_.theta - ctl.parallel_heading());
      }
      align_report_ = rep;
      event("alignment", rep.success ? "alignment done" : "alignment failed: " + rep.failure_reason);
      return {};
    }
    return out.twist;
  }

  void handle(const cmd::Teleop& c) {
    teleop_ = c.twist;
    teleop_time_ = t_;
  }
  void handle(const cmd::SetGoal& c) {
    goal_ = c.goal;
    nav_status_ = {};
    align_.reset();
    mode_ = DriveMode::kAuto;
    event("goal", "goal accepted");
  }
  void handle(const cmd::StartAlignment&) {
    AlignmentConfig cfg = sc_.align;
    align_.emplace(cfg);
    align_report_.reset();
    goal_.reset();
    mode_ = DriveMode::kAuto;
    event("alignment", "alignment started");
  }
  void handle(const cmd::TravelConfig&) {
    arm_target_ = travel_configuration();
    event("arm", "travel configuration");
  }
  void handle(const cmd::EStop&) {
    if (!estop_) event("estop", "emergency stop latched");
    estop_ = true;
    arm_target_ = arm_;
    arm_vel_.fill(0.0);
  }
  void handle(const cmd::Resume&) {
    if (estop_) event("estop", "resumed");
    estop_ = false;
  }
  void handle(const cmd::SetMode& c) {
    mode_ = c.mode;
    if (c.mode == DriveMode::kManual) {
      goal_.reset();
      if (align_ && !align_->finished()) align_.reset();
      teleop_ = {};
    }
  }

  void event(const std::string& kind, const std::string& text) {
    events_.push_back({tick_, t_, kind, text});
  }

  static constexpr double kTeleopTimeout = 0.5;

  Scenario sc_;
  std::shared_ptr<const ReferenceMap> map_;
  std::uint64_t seed_;
  WorldModel world_;
  BaseState base_;
  ArmConfig arm_;
  ArmConfig arm_target_;
  JointVelocities arm_vel_{};
  Tracker tracker_;
  Scan scan_;
  Pose2 est_;
  Rng lidar_rng_, odom_rng_, depth_rng_;
  std::uint64_t tick_ = 0;
  double t_ = 0.0;
  DriveMode mode_ = DriveMode::kManual;
  bool estop_ = false;
  Twist teleop_;
  double teleop_time_ = -1e9;
  Twist cmd_;
  std::optional<WaypointGoal> goal_;
  NavStatus nav_status_;
  std::optional<AlignmentController> align_;
  std::optional<AlignmentReport> align_report_;
  std::vector<SimEvent> events_;
};

// ---------------------------------------------------------------------------
// Closed-loop runs

enum class RouteStatus { kCompleted, kAbortedBlocked, kAbortedLost, kTimeout };

inline const char* to_string(RouteStatus s) {
  switch (s) {
    case RouteStatus::kCompleted: return "completed";
    case RouteStatus::kAbortedBlocked: return "aborted_blocked";
    case RouteStatus::kAbortedLost: return "aborted_lost";
    case RouteStatus::kTimeout: return "timeout";
  }
  return "?";
}

struct RouteOptions {
  double blocked_timeout = 20.0;
  std::uint64_t max_ticks = 20 * 60 * 10;
};

struct RouteResult {
  RouteStatus status = RouteStatus::kCompleted;
  std::size_t waypoints_reached = 0;
  std::vector<TickRecord> log;
  std::size_t lost_events = 0;
  double min_clearance = std::numeric_limits<double>::infinity();
  double final_gt_error = 0.0;  // to the last reached waypoint
};

/// Executes the route through the full sense/localize/control loop. Teleop
/// segments tick in manual mode, waypoints in auto mode.
inline RouteResult run_route(Simulation& sim, const std::vector<RouteStep>& route, const RouteOptions& opt = {}) {
  if (route.empty()) throw ValidationError("run_route: empty route");
  RouteResult res;
  const Vec2 half = sim.scenario().arm.footprint_half;
  auto record = [&](TickRecord r) {
    res.min_clearance = std::min(res.min_clearance, footprint_clearance(sim.world(), r.gt, half));
    res.log.push_back(std::move(r));
  };
  auto done = [&](RouteStatus st) {
    res.status = st;
    res.lost_events = sim.tracker().lost_events();
    return res;
  };
  for (const auto& step : route) {
    if (const auto* tele = std::get_if<TeleopSegment>(&step)) {
      sim.apply(cmd::SetMode{DriveMode::kManual});
      const auto n = static_cast<std::uint64_t>(std::llround(tele->duration / sim.scenario().dt));
      for (std::uint64_t k = 0; k < n; ++k) {
        sim.apply(cmd::Teleop{tele->twist});
        record(sim.tick());
        if (sim.tracker().lost()) return done(RouteStatus::kAbortedLost);
        if (res.log.size() >= opt.max_ticks) return done(RouteStatus::kTimeout);
      }
      continue;
    }
    const auto& goal = std::get<WaypointGoal>(step);
    sim.apply(cmd::SetGoal{goal});
    double blocked_since = -1.0;
    while (sim.goal()) {
      record(sim.tick());
      if (sim.tracker().lost()) return done(RouteStatus::kAbortedLost);
      if (sim.nav_status().phase == NavPhase::kBlocked) {
        if (blocked_since < 0.0) blocked_since = sim.time();
        if (sim.time() - blocked_since > opt.blocked_timeout) return done(RouteStatus::kAbortedBlocked);
      } else {
        blocked_since = -1.0;
      }
      if (res.log.size() >= opt.max_ticks) return done(RouteStatus::kTimeout);
    }
    ++res.waypoints_reached;
    res.final_gt_error = (sim.base().pose.position() - goal.target).norm();
  }
  // Let the base come to rest so the final pose is the settled one.
  for (int k = 0; k < 200 && !sim.base().twist.is_zero(); ++k) record(sim.tick());
  return done(RouteStatus::kCompleted);
}

struct AlignmentRun {
  AlignmentReport report;
  std::vector<TickRecord> log;
  std::size_t lost_events = 0;
};

/// Drives the alignment procedure to completion and scores it on ground truth.
/// `on_tick` may alter the world (e.g. remove the panel) between ticks.
template <typename OnTick>
inline AlignmentRun run_alignment(Simulation& sim, OnTick&& on_tick, std::uint64_t max_ticks = 20 * 180,
                                  std::uint64_t hold_ticks = 40) {
  AlignmentRun run;
  sim.apply(cmd::StartAlignment{});
  std::uint64_t after = 0;
  while (run.log.size() < max_ticks) {
    on_tick(sim);
    run.log.push_back(sim.tick());
    if (sim.alignment_report() && ++after > hold_ticks) break;
  }
  if (!sim.alignment_report()) {
    AlignmentReport rep;
    rep.final_phase = AlignmentPhase::kFailed;
    rep.failure_reason = "tick budget exhausted";
    if (sim.alignment()) rep.phases_log = sim.alignment()->log();
    run.report = rep;
  } else {
    run.report = *sim.alignment_report();
  }
  if (sim.alignment()) {
    fill_ground_truth(run.report, *sim.alignment(), sim.world(), sim.base().pose, sim.camera_ground_truth().pose);
  }
  run.lost_events = sim.tracker().lost_events();
  return run;
}

inline AlignmentRun run_alignment(Simulation& sim) {
  return run_alignment(sim, [](Simulation&) {});
}

// ---------------------------------------------------------------------------
// Metrics

/// Nearest-rank percentile, q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

struct PoseErrorSummary {
  double p95_position = 0.0;
  double p95_heading = 0.0;  // rad
  double max_position = 0.0;
  double mean_position = 0.0;
};

inline PoseErrorSummary pose_errors(const std::vector<TickRecord>& log) {
  std::vector<double> pos, head;
  for (const auto& r : log) {
    pos.push_back((r.gt.position() - r.est.position()).norm());
    head.push_back(std::abs(wrap_angle(r.gt.theta - r.est.theta)));
  }
  PoseErrorSummary s;
  if (pos.empty()) return s;
  s.p95_position = percentile(pos, 0.95);
  s.p95_heading = percentile(head, 0.95);
  s.max_position = *std::max_element(pos.begin(), pos.end());
  double sum = 0.0;
  for (double p : pos) sum += p;
  s.mean_position = sum / static_cast<double>(pos.size());
  return s;
}

inline double path_length(const std::vector<TickRecord>& log) {
  double len = 0.0;
  for (std::size_t i = 1; i < log.size(); ++i) len += (log[i].gt.position() - log[i - 1].gt.position()).norm();
  return len;
}

}  // namespace mobman
