#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mobman/alignment.hpp"
#include "mobman/world.hpp"
#include "support.hpp"

using namespace mobman;

namespace {

BaseLimits limits(double a_lin = 0.5, double a_ang = 1.0) {
  BaseLimits l;
  l.a_lin = a_lin;
  l.a_ang = a_ang;
  return l;
}

}  // namespace

TEST(Pose2, ThetaStaysInHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(Pose2(0, 0, 3.0 * kPi).theta, kPi);
  EXPECT_DOUBLE_EQ(Pose2(0, 0, -kPi).theta, kPi);
  EXPECT_NEAR(Pose2(0, 0, 7.0).theta, 7.0 - 2.0 * kPi, 1e-12);
  const Pose2 a(1.0, 2.0, 3.0), b(0.5, -0.2, 2.5);
  const Pose2 c = a.compose(b);
  EXPECT_GT(c.theta, -kPi);
  EXPECT_LE(c.theta, kPi);
  const Pose2 back = a.between(c);
  EXPECT_NEAR(back.x, b.x, 1e-12);
  EXPECT_NEAR(back.y, b.y, 1e-12);
  EXPECT_NEAR(back.theta, b.theta, 1e-12);
}

TEST(StepBase, RestStaysAtRest) {
  BaseState s;
  s.pose = {1.0, 2.0, 0.3};
  const BaseState n = step_base(s, {0.0, 0.0}, 0.1, limits());
  EXPECT_EQ(n.pose, s.pose);
  EXPECT_EQ(n.twist, (Twist{0.0, 0.0}));
}

TEST(StepBase, AccelerationClampFromRest) {
  BaseState s;
  const BaseState n = step_base(s, {1.0, 0.0}, 0.1, limits(0.5));
  EXPECT_DOUBLE_EQ(n.twist.v, 0.05);
}

TEST(StepBase, StraightLineIntegration) {
  BaseState s;
  s.twist = {1.0, 0.0};
  const BaseState n = step_base(s, {1.0, 0.0}, 0.1, limits());
  EXPECT_DOUBLE_EQ(n.pose.x, 0.1);
  EXPECT_DOUBLE_EQ(n.pose.y, 0.0);
}

TEST(StepBase, ArcIntegrationMatchesCircle) {
  BaseState s;
  s.twist = {0.5, 0.5};
  BaseLimits l = limits();
  BaseState n = s;
  for (int i = 0; i < 20; ++i) n = step_base(n, {0.5, 0.5}, 0.1, l);
  // Radius 1 circle centred at (0, 1); two seconds sweeps one radian.
  EXPECT_NEAR(n.pose.x, std::sin(1.0), 1e-12);
  EXPECT_NEAR(n.pose.y, 1.0 - std::cos(1.0), 1e-12);
  EXPECT_NEAR(n.pose.theta, 1.0, 1e-12);
}

TEST(StepBase, SpeedCapsApplied) {
  BaseState s;
  s.twist = {0.98, 0.99};
  const BaseState n = step_base(s, {5.0, 5.0}, 0.1, limits());
  EXPECT_DOUBLE_EQ(n.twist.v, 1.0);
  EXPECT_DOUBLE_EQ(n.twist.omega, 1.0);
}

TEST(StepBase, RejectsNonFiniteInput) {
  BaseState s;
  EXPECT_THROW(step_base(s, {std::nan(""), 0.0}, 0.1, limits()), ValidationError);
  EXPECT_THROW(step_base(s, {0.0, std::numeric_limits<double>::infinity()}, 0.1, limits()), ValidationError);
  EXPECT_THROW(step_base(s, {0.0, 0.0}, 0.0, limits()), ValidationError);
  s.pose.x = std::nan("");
  EXPECT_THROW(step_base(s, {0.0, 0.0}, 0.1, limits()), ValidationError);
}

TEST(StepBase, ClampNeverViolatedOnRandomInputs) {
  Rng rng(17);
  const BaseLimits l = limits(0.5, 1.0);
  for (int i = 0; i < 10000; ++i) {
    BaseState s;
    s.twist = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const double dt = rng.uniform(0.001, 0.2);
    const Twist cmd{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    const BaseState n = step_base(s, cmd, dt, l);
    ASSERT_LE(std::abs(n.twist.v - s.twist.v), l.a_lin * dt + 1e-12);
    ASSERT_LE(std::abs(n.twist.omega - s.twist.omega), l.a_ang * dt + 1e-12);
    ASSERT_LE(std::abs(n.twist.v), l.v_max);
    ASSERT_LE(std::abs(n.twist.omega), l.omega_max);
  }
}

TEST(Battery, EndpointsAndMidpoint) {
  EXPECT_EQ(battery_voltage(0.0), 29.4);
  EXPECT_EQ(battery_voltage(6000.0), 25.6);
  EXPECT_NEAR(battery_voltage(3000.0), 27.5, 1e-12);
  EXPECT_EQ(battery_voltage(9000.0), 25.6);
}

TEST(Battery, NonIncreasingAndExhaustedAtFloor) {
  double prev = battery_voltage(0.0);
  for (double t = 10.0; t <= 7000.0; t += 10.0) {
    const double v = battery_voltage(t);
    ASSERT_LE(v, prev);
    ASSERT_GE(v, 25.6);
    prev = v;
  }
  BatteryState b;
  EXPECT_FALSE(b.exhausted());
  b = advance_battery(b, 5999.0);
  EXPECT_FALSE(b.exhausted());
  b = advance_battery(b, 1.0);
  EXPECT_TRUE(b.exhausted());
}

TEST(Lidar, PerpendicularWallRange) {
  WorldModel w;
  w.segments = {{{2.0, -5.0}, {2.0, 5.0}}};
  LidarConfig cfg;
  const Scan s = lidar_scan(w, {0.0, 0.0, 0.0}, cfg);
  const std::size_t front = cfg.n_beams / 2;  // beam angle 0
  ASSERT_DOUBLE_EQ(s.angles[front], 0.0);
  EXPECT_TRUE(s.valid[front]);
  EXPECT_DOUBLE_EQ(s.ranges[front], 2.0);
}

TEST(Lidar, RearSectorOccludedFrontNever) {
  const WorldModel w = testing_support::box_room(10, 10);
  LidarConfig cfg;
  const Scan s = lidar_scan(w, {5.0, 5.0, 0.7}, cfg);
  EXPECT_DOUBLE_EQ(s.angles[0], -kPi);
  EXPECT_FALSE(s.valid[0]);
  EXPECT_TRUE(s.valid[cfg.n_beams / 2]);
  // 720 beams, half-degree spacing: 150 degrees is beam 660.
  EXPECT_NEAR(rad2deg(s.angles[660]), 150.0, 1e-9);
  EXPECT_FALSE(s.valid[660]);
  EXPECT_TRUE(s.valid[659]);
  EXPECT_FALSE(s.valid[60]);  // -150 degrees
  EXPECT_TRUE(s.valid[61]);
}

TEST(Lidar, OccludedCountIsOneSixth) {
  const WorldModel w = testing_support::box_room(10, 10);
  for (std::size_t n : {360u, 720u, 1000u, 1441u}) {
    LidarConfig cfg;
    cfg.n_beams = n;
    const Scan s = lidar_scan(w, {5.0, 5.0, 0.0}, cfg);
    const auto invalid = static_cast<long>(n - s.valid_count());
    const long expect = std::lround(static_cast<double>(n) * 60.0 / 360.0);
    EXPECT_LE(std::abs(invalid - expect), 1) << n;
  }
}

TEST(Lidar, NoOcclusionWhenWidthZero) {
  const WorldModel w = testing_support::box_room(10, 10);
  LidarConfig cfg;
  cfg.occlusion_width_deg = 0.0;
  EXPECT_EQ(lidar_scan(w, {5.0, 5.0, 0.0}, cfg).valid_count(), cfg.n_beams);
}

TEST(Lidar, EmptyWorldHasNoReturns) {
  LidarConfig cfg;
  const Scan s = lidar_scan(WorldModel{}, {}, cfg);
  EXPECT_EQ(s.valid_count(), 0u);
  for (double r : s.ranges) EXPECT_EQ(r, cfg.max_range);
  EXPECT_EQ(s.angles.size(), s.ranges.size());
  EXPECT_EQ(s.valid.size(), s.ranges.size());
}

TEST(Lidar, AnglesUniformAndIncreasing) {
  LidarConfig cfg;
  cfg.n_beams = 97;
  const Scan s = lidar_scan(WorldModel{}, {}, cfg);
  const double step = s.angles[1] - s.angles[0];
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_NEAR(s.angles[i] - s.angles[i - 1], step, 1e-12);
}

TEST(Lidar, RejectsBadConfig) {
  LidarConfig cfg;
  cfg.n_beams = 4;
  EXPECT_THROW(lidar_scan(WorldModel{}, {}, cfg), ValidationError);
  cfg.n_beams = 16;
  cfg.occlusion_width_deg = 360.0;
  EXPECT_THROW(lidar_scan(WorldModel{}, {}, cfg), ValidationError);
}

TEST(Lidar, RangesMatchAnalyticBoxIntersection) {
  const double W = 8.0, H = 5.0;
  const WorldModel w = testing_support::box_room(W, H);
  LidarConfig cfg;
  cfg.occlusion_width_deg = 0.0;
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose2 p(rng.uniform(0.5, W - 0.5), rng.uniform(0.5, H - 0.5), rng.uniform(-kPi, kPi));
    const Scan s = lidar_scan(w, p, cfg);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double a = p.theta + s.angles[i];
      const double c = std::cos(a), sn = std::sin(a);
      double t = std::numeric_limits<double>::infinity();
      if (c > 0) t = std::min(t, (W - p.x) / c);
      if (c < 0) t = std::min(t, -p.x / c);
      if (sn > 0) t = std::min(t, (H - p.y) / sn);
      if (sn < 0) t = std::min(t, -p.y / sn);
      ASSERT_TRUE(s.valid[i]);
      ASSERT_LE(s.ranges[i], cfg.max_range);
      ASSERT_NEAR(s.ranges[i], t, 1e-9);
    }
  }
}

TEST(Lidar, NearestHitWinsAgainstDisc) {
  WorldModel w;
  w.segments = {{{3.0, -5.0}, {3.0, 5.0}}};
  DynamicObstacle o;
  o.waypoints = {{1.5, 0.0}};
  o.radius = 0.3;
  w.obstacles.push_back(o);
  LidarConfig cfg;
  const Scan s = lidar_scan(w, {}, cfg);
  EXPECT_NEAR(s.ranges[cfg.n_beams / 2], 1.2, 1e-12);
}

TEST(Depth, SquareWallAllAtUnitDepth) {
  WorldModel w;
  w.segments = {{{1.0, -10.0}, {1.0, 10.0}}};
  DepthConfig cfg;
  const auto pts = depth_scan(w, {0.0, 0.0, 0.0}, cfg);
  ASSERT_EQ(pts.size(), cfg.n_rays);
  for (const auto& p : pts) EXPECT_NEAR(p.x, 1.0, 1e-12);
}

TEST(Depth, OpenSpaceIsEmpty) {
  EXPECT_TRUE(depth_scan(WorldModel{}, {}, DepthConfig{}).empty());
}

TEST(Depth, SkewedWallFitsAnalyticAngle) {
  // Wall whose normal points at 30 degrees and passes 1.2 m from the camera.
  const double phi = deg2rad(30.0);
  const Vec2 n = unit(phi), foot = n * 1.2, along = rotate(n, kPi / 2.0);
  WorldModel w;
  w.segments = {{foot - along * 5.0, foot + along * 5.0}};
  const Pose2 cam(2.0, -1.0, 0.4);
  WorldModel moved;
  moved.segments = {{cam.transform(w.segments[0].a), cam.transform(w.segments[0].b)}};
  const auto pts = depth_scan(moved, cam, DepthConfig{});
  ASSERT_GE(pts.size(), 100u);
  const PanelFit fit = fit_panel(pts);
  EXPECT_NEAR(fit.angle, phi, 1e-9);
  EXPECT_NEAR(fit.distance, 1.2, 1e-9);
}

TEST(Depth, RejectsBadFov) {
  DepthConfig cfg;
  cfg.fov_deg = 150.0;
  EXPECT_THROW(depth_scan(WorldModel{}, {}, cfg), ValidationError);
}

TEST(Obstacles, ZeroSpeedUnchanged) {
  WorldModel w;
  DynamicObstacle o;
  o.waypoints = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  o.progress = 0.7;
  w.obstacles.push_back(o);
  const WorldModel n = advance_obstacles(w, 0.1);
  EXPECT_EQ(n.obstacles[0].center(), w.obstacles[0].center());
}

TEST(Obstacles, WrapsToLoopStart) {
  WorldModel w;
  DynamicObstacle o;
  o.waypoints = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  o.speed = 1.0;
  o.progress = 3.9;
  w.obstacles.push_back(o);
  const WorldModel n = advance_obstacles(w, 0.2);
  EXPECT_NEAR(n.obstacles[0].progress, 0.1, 1e-12);
  EXPECT_NEAR(n.obstacles[0].center().x, 0.1, 1e-12);
  EXPECT_NEAR(n.obstacles[0].center().y, 0.0, 1e-12);
}

TEST(Obstacles, SeededWalkersAreBitwiseReproducible) {
  auto make = [] {
    WorldModel w = testing_support::box_room(30, 20);
    WalkerParams p;
    Rng rng(1234);
    populate_walkers(w, p, rng);
    return w;
  };
  WorldModel a = make(), b = make();
  ASSERT_EQ(a.obstacles.size(), 40u);
  for (int step = 0; step < 500; ++step) {
    a = advance_obstacles(std::move(a), 0.05);
    b = advance_obstacles(std::move(b), 0.05);
    for (std::size_t i = 0; i < a.obstacles.size(); ++i) {
      ASSERT_EQ(a.obstacles[i].center().x, b.obstacles[i].center().x);
      ASSERT_EQ(a.obstacles[i].center().y, b.obstacles[i].center().y);
    }
  }
}

TEST(Obstacles, WalkersKeepClearOfStaticGeometry) {
  WorldModel w = testing_support::box_room(30, 20);
  w.segments.push_back({{10, 5}, {10, 15}});
  WalkerParams p;
  Rng rng(5);
  populate_walkers(w, p, rng);
  for (const auto& o : w.obstacles)
    for (std::size_t i = 0; i < o.waypoints.size(); ++i) {
      const Segment edge{o.waypoints[i], o.waypoints[(i + 1) % o.waypoints.size()]};
      for (const auto& s : w.segments) EXPECT_GE(segment_distance(edge, s), p.radius + p.clearance - 1e-12);
    }
}

TEST(Obstacles, KeepOutTurnsWalkerAround) {
  WorldModel w;
  DynamicObstacle o;
  o.waypoints = {{0, 0}, {10, 0}, {10, 1}, {0, 1}};
  o.radius = 0.15;
  o.speed = 1.0;
  o.progress = 3.0;
  w.obstacles.push_back(o);
  const KeepOut k{{5.0, 0.0}, 0.6};
  double closest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 200; ++i) {
    w = advance_obstacles(std::move(w), 0.05, {k});
    closest = std::min(closest, (w.obstacles[0].center() - k.center).norm());
  }
  EXPECT_GE(closest, o.radius + k.radius);
  EXPECT_EQ(w.obstacles[0].direction, -1);
}

TEST(WorldModel, ValidationRejectsBadGeometry) {
  WorldModel w;
  w.segments = {{{0, 0}, {0, 0}}};
  EXPECT_THROW(w.validate(), ValidationError);
  w.segments = {{{0, 0}, {1, 0}}};
  w.panels = {3};
  EXPECT_THROW(w.validate(), ValidationError);
  w.panels = {0};
  DynamicObstacle o;
  o.waypoints = {{0, 0}};
  o.radius = 0.0;
  w.obstacles = {o};
  EXPECT_THROW(w.validate(), ValidationError);
}
