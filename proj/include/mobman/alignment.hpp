#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mobman/arm.hpp"
#include "mobman/errors.hpp"
#include "mobman/geometry.hpp"
#include "mobman/rng.hpp"
#include "mobman/world.hpp"

namespace mobman {

struct PanelFitConfig {
  std::size_t ransac_iters = 200;
  double inlier_threshold = 0.01;
  std::size_t min_inliers = 20;
  std::uint64_t seed = 0;
};

/// Line fitted to depth points, in the camera frame. `angle` is the
/// direction of the panel normal pointing away from the camera (0 when the
/// panel is parallel to the image plane); `distance` is perpendicular.
struct PanelFit {
  double angle = 0.0;
  double distance = 0.0;
  std::size_t inliers = 0;
  double rms = 0.0;
  Vec2 normal{1.0, 0.0};
  std::vector<std::size_t> inlier_indices;
};

namespace detail {

struct Line {
  Vec2 normal;
  double offset = 0.0;  // normal . p == offset
};

inline std::vector<std::size_t> line_inliers(const std::vector<Vec2>& pts, const Line& l, double thr) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (std::abs(dot(l.normal, pts[i]) - l.offset) <= thr) idx.push_back(i);
  return idx;
}

/// Total least squares: line through the centroid along the principal axis.
inline Line tls_line(const std::vector<Vec2>& pts, const std::vector<std::size_t>& idx) {
  Vec2 c;
  for (auto i : idx) c = c + pts[i];
  c = c * (1.0 / static_cast<double>(idx.size()));
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (auto i : idx) {
    const Vec2 d = pts[i] - c;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  const double dir = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  const Vec2 n = unit(dir + kPi / 2.0);
  return {n, dot(n, c)};
}

}  // namespace detail

/// RANSAC over two-point line hypotheses, refined by total least squares on
/// the consensus set.
inline PanelFit fit_panel(const std::vector<Vec2>& points, const PanelFitConfig& cfg = {}) {
  if (points.size() < std::max<std::size_t>(cfg.min_inliers, 2))
    throw NoPanelError("fit_panel: " + std::to_string(points.size()) + " points");
  Rng rng(cfg.seed);
  std::size_t best_count = 0;
  double best_cost = 0.0;
  detail::Line best;
  for (std::size_t it = 0; it < cfg.ransac_iters; ++it) {
    const auto i = rng.below(points.size());
    const auto j = rng.below(points.size());
    const Vec2 d = points[j] - points[i];
    if (i == j || d.norm() < 1e-9) continue;
    const Vec2 n = rotate(d * (1.0 / d.norm()), kPi / 2.0);
    const detail::Line l{n, dot(n, points[i])};
    std::size_t count = 0;
    double cost = 0.0;
    for (const auto& p : points) {
      const double r = std::abs(dot(n, p) - l.offset);
      if (r <= cfg.inlier_threshold) {
        ++count;
        cost += r * r;
      }
    }
    if (count > best_count || (count == best_count && cost < best_cost)) {
      best_count = count;
      best_cost = cost;
      best = l;
    }
  }
  if (best_count < cfg.min_inliers)
    throw NoPanelError("fit_panel: best line has " + std::to_string(best_count) + " inliers");

  auto idx = detail::line_inliers(points, best, cfg.inlier_threshold);
  detail::Line line = detail::tls_line(points, idx);
  for (int round = 0; round < 5; ++round) {
    auto next = detail::line_inliers(points, line, cfg.inlier_threshold);
    if (next == idx || next.size() < 2) break;
    idx = std::move(next);
    line = detail::tls_line(points, idx);
  }
  idx = detail::line_inliers(points, line, cfg.inlier_threshold);
  if (idx.size() < cfg.min_inliers)
    throw NoPanelError("fit_panel: refined line has " + std::to_string(idx.size()) + " inliers");

  if (line.offset < 0.0) line = {-line.normal, -line.offset};
  PanelFit fit;
  fit.normal = line.normal;
  fit.angle = std::atan2(line.normal.y, line.normal.x);
  fit.distance = line.offset;
  fit.inliers = idx.size();
  double ss = 0.0;
  for (auto i : idx) {
    const double r = dot(line.normal, points[i]) - line.offset;
    ss += r * r;
  }
  fit.rms = std::sqrt(ss / static_cast<double>(idx.size()));
  fit.inlier_indices = std::move(idx);
  return fit;
}

enum class AlignmentPhase { kFitPanel, kTurnOrthogonal, kApproach, kTurnParallel, kArmCompensate, kDone, kFailed };

inline const char* to_string(AlignmentPhase p) {
  switch (p) {
    case AlignmentPhase::kFitPanel: return "FitPanel";
    case AlignmentPhase::kTurnOrthogonal: return "TurnOrthogonal";
    case AlignmentPhase::kApproach: return "Approach";
    case AlignmentPhase::kTurnParallel: return "TurnParallel";
    case AlignmentPhase::kArmCompensate: return "ArmCompensate";
    case AlignmentPhase::kDone: return "Done";
    case AlignmentPhase::kFailed: return "Failed";
  }
  return "?";
}

struct AlignmentConfig {
  double standoff = 0.6;
  double tol_d = 0.01;
  double tol_a = deg2rad(1.5);
  double tol_a_arm = deg2rad(0.5);
  // Controllers stop commanding inside these bands and let the base settle.
  double deadband_d = 0.003;
  double deadband_a = deg2rad(0.2);
  double v_approach = 0.3;
  double omega_turn = 0.6;
  double brake_factor = 0.8;
  double a_lin = 0.5;
  double a_ang = 1.0;
  double settle_speed = 1e-6;
  double phase_timeout = 60.0;
  double revalidate_angle_tol = deg2rad(3.0);
  double revalidate_distance_tol = 0.05;
  // Camera heading relative to the base in the travel configuration.
  double camera_offset = -kPi / 2.0;
  PanelFitConfig fit;
};

/// Panel line frozen in the global frame: {p : normal . p == offset}, normal
/// pointing from the robot toward the panel.
struct PanelLine {
  Vec2 normal;
  double offset = 0.0;
  double distance_from(Vec2 p) const { return offset - dot(normal, p); }
  double normal_angle() const { return std::atan2(normal.y, normal.x); }
};

struct AlignmentInput {
  double t = 0.0;
  Pose2 base_est;
  Twist measured;  // wheel odometry
  Pose2 camera_est;
  bool localization_ok = true;
  std::optional<PanelFit> fit;
  bool arm_at_target = true;
};

struct AlignmentCommand {
  Twist twist;
  std::optional<double> wrist_yaw_delta;
  AlignmentPhase phase = AlignmentPhase::kFitPanel;
};

struct PhaseEntry {
  AlignmentPhase phase;
  double t;
};

/// Four-phase panel alignment: fit and freeze the panel line, turn to face
/// it, drive to the standoff using localization only, turn parallel, then
/// revalidate with the camera and optionally pan the wrist for the residual.
class AlignmentController {
 public:
  explicit AlignmentController(AlignmentConfig cfg = {}) : cfg_(cfg) {}

  AlignmentPhase phase() const { return phase_; }
  bool wants_fit() const { return phase_ == AlignmentPhase::kFitPanel; }
  bool finished() const { return phase_ == AlignmentPhase::kDone || phase_ == AlignmentPhase::kFailed; }
  bool revalidating() const { return revalidate_; }
  const std::optional<PanelLine>& panel() const { return panel_; }
  std::size_t panel_freezes() const { return freezes_; }
  const std::vector<PhaseEntry>& log() const { return log_; }
  const std::string& failure_reason() const { return failure_; }
  double arm_compensation() const { return compensation_; }
  double residual() const { return residual_; }
  const AlignmentConfig& config() const { return cfg_; }

  double parallel_heading() const { return panel_->normal_angle() - cfg_.camera_offset; }

  AlignmentCommand step(const AlignmentInput& in) {
    if (log_.empty()) enter(AlignmentPhase::kFitPanel, in.t);
    AlignmentCommand cmd;
    if (!finished()) {
      if (!in.localization_ok) {
        fail("localization lost", in.t);
      } else if (in.t - phase_start_ > cfg_.phase_timeout) {
        fail(std::string("timeout in ") + to_string(phase_), in.t);
      }
    }
    const bool settled = std::abs(in.measured.v) <= cfg_.settle_speed &&
                         std::abs(in.measured.omega) <= cfg_.settle_speed;
    switch (phase_) {
      case AlignmentPhase::kFitPanel:
        if (!revalidate_) {
          if (!in.fit) {
            fail("no panel in camera view", in.t);
            break;
          }
          freeze(*in.fit, in.camera_est);
          enter(AlignmentPhase::kTurnOrthogonal, in.t);
        } else {
          if (!settled) break;
          revalidate(in);
        }
        break;
      case AlignmentPhase::kTurnOrthogonal: {
        const double err = wrap_angle(panel_->normal_angle() - in.base_est.theta);
        cmd.twist.omega = turn_command(err);
        if (std::abs(err) <= cfg_.tol_a && cmd.twist.omega == 0.0 && settled)
          enter(AlignmentPhase::kApproach, in.t);
        break;
      }
      case AlignmentPhase::kApproach: {
        const double e = panel_->distance_from(in.base_est.position()) - cfg_.standoff;
        const double herr = wrap_angle(panel_->normal_angle() - in.base_est.theta);
        if (std::abs(e) > cfg_.deadband_d)
          cmd.twist.v = std::copysign(
              std::min(cfg_.v_approach, std::sqrt(2.0 * cfg_.a_lin * cfg_.brake_factor * std::abs(e))), e);
        if (std::abs(herr) > cfg_.deadband_a) cmd.twist.omega = std::clamp(2.0 * herr, -0.2, 0.2);
        if (std::abs(e) <= cfg_.tol_d && cmd.twist.is_zero() && settled)
          enter(AlignmentPhase::kTurnParallel, in.t);
        break;
      }
      case AlignmentPhase::kTurnParallel: {
        const double err = wrap_angle(parallel_heading() - in.base_est.theta);
        cmd.twist.omega = turn_command(err);
        if (std::abs(err) <= cfg_.tol_a && cmd.twist.omega == 0.0 && settled) {
          revalidate_ = true;
          enter(AlignmentPhase::kFitPanel, in.t);
        }
        break;
      }
      case AlignmentPhase::kArmCompensate:
        if (!compensation_sent_) {
          cmd.wrist_yaw_delta = compensation_;
          compensation_sent_ = true;
        } else if (in.arm_at_target) {
          enter(AlignmentPhase::kDone, in.t);
        }
        break;
      case AlignmentPhase::kDone:
      case AlignmentPhase::kFailed:
        break;
    }
    if (finished()) cmd.twist = {};
    cmd.phase = phase_;
    return cmd;
  }

 private:
  double turn_command(double err) const {
    if (std::abs(err) <= cfg_.deadband_a) return 0.0;
    return std::copysign(
        std::min(cfg_.omega_turn, std::sqrt(2.0 * cfg_.a_ang * cfg_.brake_factor * std::abs(err))), err);
  }

  void freeze(const PanelFit& fit, const Pose2& camera) {
    const Vec2 n = rotate(fit.normal, camera.theta);
    const Vec2 p = camera.transform(fit.normal * fit.distance);
    panel_ = PanelLine{n, dot(n, p)};
    ++freezes_;
  }

  void revalidate(const AlignmentInput& in) {
    if (!in.fit) {
      fail("panel lost at revalidation", in.t);
      return;
    }
    const double expect_angle = wrap_angle(panel_->normal_angle() - in.camera_est.theta);
    const double expect_dist = panel_->distance_from(in.camera_est.position());
    if (std::abs(wrap_angle(in.fit->angle - expect_angle)) > cfg_.revalidate_angle_tol ||
        std::abs(in.fit->distance - expect_dist) > cfg_.revalidate_distance_tol) {
      fail("panel moved since it was fitted", in.t);
      return;
    }
    residual_ = wrap_angle(in.base_est.theta - parallel_heading());
    if (std::abs(residual_) > cfg_.tol_a_arm) {
      compensation_ = -residual_;
      enter(AlignmentPhase::kArmCompensate, in.t);
    } else {
      enter(AlignmentPhase::kDone, in.t);
    }
  }

  void enter(AlignmentPhase p, double t) {
    phase_ = p;
    phase_start_ = t;
    log_.push_back({p, t});
  }

  void fail(const std::string& why, double t) {
    failure_ = why;
    enter(AlignmentPhase::kFailed, t);
  }

  AlignmentConfig cfg_;
  AlignmentPhase phase_ = AlignmentPhase::kFitPanel;
  double phase_start_ = 0.0;
  bool revalidate_ = false;
  bool compensation_sent_ = false;
  double compensation_ = 0.0;
  double residual_ = 0.0;
  std::size_t freezes_ = 0;
  std::optional<PanelLine> panel_;
  std::vector<PhaseEntry> log_;
  std::string failure_;
};

/// Phase log follows FitPanel, TurnOrthogonal, Approach, TurnParallel, then
/// an optional revalidation FitPanel and ArmCompensate, ending in Done.
inline bool phase_order_valid(const std::vector<PhaseEntry>& log) {
  using P = AlignmentPhase;
  static const std::vector<P> order = {P::kFitPanel, P::kTurnOrthogonal, P::kApproach, P::kTurnParallel,
                                       P::kFitPanel, P::kArmCompensate, P::kDone};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].phase == P::kFailed) return i + 1 == log.size();
    while (pos < order.size() && order[pos] != log[i].phase) {
      if (order[pos] != P::kArmCompensate) return false;
      ++pos;
    }
    if (pos == order.size()) return false;
    ++pos;
  }
  return true;
}

}  // namespace mobman
