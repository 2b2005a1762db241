#include <gtest/gtest.h>

#include <cmath>

#include "mobman/arm.hpp"
#include "mobman/rng.hpp"
#include "oracles.hpp"

using namespace mobman;

namespace {

ArmConfig random_config(Rng& rng, const ArmLimits& lim) {
  std::array<double, ArmConfig::kJoints> q{};
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(lim.joints[i].lo, lim.joints[i].hi);
  return ArmConfig::from_array(q);
}

ArmConfig full_extension() { return {}; }

}  // namespace

TEST(ForwardKinematics, FullExtensionReachesAlongHeading) {
  const ArmGeometry g;
  const auto cam = forward_kinematics(full_extension(), g, {1.0, 2.0, kPi / 2.0});
  EXPECT_NEAR(cam.reach, 0.891, 1e-12);
  EXPECT_NEAR(cam.pose.x, 1.0, 1e-12);
  EXPECT_NEAR(cam.pose.y, 2.0 + 0.891, 1e-12);
  EXPECT_NEAR(cam.pose.theta, kPi / 2.0, 1e-12);
  EXPECT_NEAR(cam.height, g.mount_height, 1e-12);
}

TEST(ForwardKinematics, BaseYawRotatesAboutMount) {
  ArmGeometry g;
  g.mount_offset = {0.1, 0.0};
  ArmConfig c;
  c.base_yaw = kPi / 2.0;
  const auto cam = forward_kinematics(c, g, {});
  EXPECT_NEAR(cam.pose.x, 0.1, 1e-12);
  EXPECT_NEAR(cam.pose.y, 0.891, 1e-12);
  EXPECT_NEAR(cam.pose.theta, kPi / 2.0, 1e-12);
}

TEST(ForwardKinematics, PitchedChainMatchesHandComputation) {
  const ArmGeometry g;
  ArmConfig c;
  c.shoulder = deg2rad(90.0);
  c.elbow = deg2rad(-90.0);
  const auto cam = forward_kinematics(c, g, {});
  EXPECT_NEAR(cam.reach, 0.30 + 0.291, 1e-12);
  EXPECT_NEAR(cam.height, g.mount_height + 0.30, 1e-12);
}

TEST(ForwardKinematics, RejectsJointLimitViolation) {
  ArmConfig c;
  c.shoulder = deg2rad(175.0);
  EXPECT_THROW(forward_kinematics(c, ArmGeometry{}, {}), ValidationError);
}

TEST(ForwardKinematics, ReachNeverExceedsChainLength) {
  Rng rng(3);
  const ArmLimits lim;
  const ArmGeometry g;
  for (int i = 0; i < 10000; ++i) {
    const auto cam = forward_kinematics(random_config(rng, lim), g, {});
    ASSERT_LE(std::abs(cam.reach), 0.891 + 1e-12);
  }
}

TEST(TravelConfiguration, FoldedSideFacingAndStable) {
  const ArmConfig t = travel_configuration();
  const ArmGeometry g;
  const Pose2 base(3.0, -1.0, 0.8);
  const auto cam = forward_kinematics(t, g, base);
  EXPECT_LE(std::abs(cam.reach), 0.25);
  EXPECT_NEAR(wrap_angle(cam.pose.theta - base.theta), -kPi / 2.0, 1e-12);
  EXPECT_TRUE(check_stability(t, g).stable);
  EXPECT_TRUE(ArmLimits{}.contains(t));
}

TEST(TravelConfiguration, LowestCenterOfMassAmongFoldedPoses) {
  // Sampled sweep of the pitch box: nothing with every joint at or above the
  // mount and |reach| <= 0.25 m carries the arm CoM lower.
  const ArmGeometry g;
  const ArmLimits lim;
  const double frozen = arm_com_profile(travel_configuration(), g).second;
  for (double s = -10.0; s <= 170.0; s += 5.0)
    for (double e = -150.0; e <= 150.0; e += 5.0)
      for (double w = -120.0; w <= 120.0; w += 5.0) {
        ArmConfig c;
        c.shoulder = deg2rad(s);
        c.elbow = deg2rad(e);
        c.wrist_pitch = deg2rad(w);
        const auto prof = chain_profile(c, g);
        if (std::abs(prof.reach()) > 0.25) continue;
        if (*std::min_element(prof.height.begin(), prof.height.end()) < -1e-9) continue;
        ASSERT_GE(arm_com_profile(c, g).second, frozen - 1e-3) << s << " " << e << " " << w;
      }
}

TEST(Stability, FullExtensionZeroPayloadStable) {
  const auto r = check_stability(full_extension(), ArmGeometry{});
  EXPECT_TRUE(r.stable);
  EXPECT_NEAR(r.com_xy.x, 7.0 * 0.4455 / 24.0, 1e-12);
}

TEST(Stability, HeavyPayloadTips) {
  ArmGeometry g;
  g.payload = 50.0;
  EXPECT_FALSE(check_stability(full_extension(), g).stable);
}

TEST(Stability, PayloadThresholdMatchesMomentBalance) {
  const double expect = oracle::tipping_payload(oracle::ArmModel{});
  EXPECT_NEAR(expect, 4.674, 1e-3);
  const double got = max_stable_payload(full_extension(), ArmGeometry{}, 0.0);
  EXPECT_NEAR(got, expect, 0.01 * expect);
}

TEST(Stability, MonotoneInPayload) {
  Rng rng(8);
  const ArmLimits lim;
  for (int i = 0; i < 300; ++i) {
    const ArmConfig c = random_config(rng, lim);
    ArmGeometry g;
    bool was_unstable = false;
    for (double p = 0.0; p <= 30.0; p += 0.5) {
      g.payload = p;
      const bool stable = check_stability(c, g).stable;
      if (was_unstable) {
        ASSERT_FALSE(stable);
      }
      if (!stable) was_unstable = true;
    }
  }
}

TEST(Stability, AgreesWithBruteForce) {
  Rng rng(21);
  const ArmLimits lim;
  std::size_t stable = 0;
  for (int i = 0; i < 2000; ++i) {
    const ArmConfig c = random_config(rng, lim);
    ArmGeometry g;
    g.payload = rng.uniform(0.0, 15.0);
    oracle::ArmModel m;
    m.payload = g.payload;
    const bool want = oracle::brute_force_stable(m, c.base_yaw, {c.shoulder, c.elbow, c.wrist_pitch}, 0.02);
    ASSERT_EQ(check_stability(c, g).stable, want) << i;
    stable += want;
  }
  EXPECT_GT(stable, 100u);
  EXPECT_LT(stable, 1900u);
}

TEST(ClampWorkspace, InsideLimitsUnchanged) {
  ArmConfig c;
  c.shoulder = 0.4;
  c.elbow = 0.5;
  EXPECT_EQ(clamp_workspace(c, ArmGeometry{}, ArmLimits{}), c);
}

TEST(ClampWorkspace, JointBeyondBoundSetToBound) {
  ArmConfig c = travel_configuration();
  c.wrist_yaw = 5.0;
  const ArmLimits lim;
  EXPECT_EQ(clamp_workspace(c, ArmGeometry{}, lim).wrist_yaw, lim.joints[4].hi);
}

TEST(ClampWorkspace, ReachLimitedByBisection) {
  ArmLimits lim;
  lim.max_reach = 0.5;
  const ArmGeometry g;
  const ArmConfig c = clamp_workspace(full_extension(), g, lim);
  const double r = chain_profile(c, g).reach();
  EXPECT_GE(r, 0.4999);
  EXPECT_LE(r, 0.5);
}

TEST(ClampWorkspace, IdempotentAndWithinLimits) {
  Rng rng(4);
  ArmLimits lim;
  lim.max_reach = 0.6;
  const ArmGeometry g;
  for (int i = 0; i < 5000; ++i) {
    std::array<double, ArmConfig::kJoints> q{};
    for (auto& v : q) v = rng.uniform(-4.0, 4.0);
    const ArmConfig once = clamp_workspace(ArmConfig::from_array(q), g, lim);
    ASSERT_TRUE(lim.contains(once));
    ASSERT_LE(chain_profile(once, g).reach(), lim.max_reach);
    ASSERT_EQ(clamp_workspace(once, g, lim), once);
  }
}

TEST(StepArm, AtTargetStaysPut) {
  const ArmConfig c = travel_configuration();
  JointVelocities v{};
  const auto [n, w] = step_arm(c, c, 0.05, JointMotionLimits{}, v);
  EXPECT_EQ(n, c);
  for (double x : w) EXPECT_EQ(x, 0.0);
}

TEST(StepArm, FirstStepBoundedByHalfAccelDtSquared) {
  const JointMotionLimits m;
  const double dt = 0.05;
  ArmConfig target;
  target.shoulder = 1.0;
  target.elbow = -1.0;
  target.wrist_yaw = 2.0;
  const auto [n, w] = step_arm(ArmConfig{}, target, dt, m, JointVelocities{});
  const auto q = n.as_array();
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_LE(std::abs(q[i]), 0.5 * m.max_accel[i] * dt * dt + 1e-15);
}

TEST(StepArm, ConvergesNoFasterThanTrapezoidAndNotMuchSlower) {
  const JointMotionLimits m;
  const double dt = 0.05;
  for (double dist : {0.05, 0.3, 1.0, 2.5}) {
    ArmConfig target;
    target.shoulder = dist;
    const double a = m.max_accel[1], vmax = m.max_vel[1];
    const double t_min = dist >= vmax * vmax / a ? dist / vmax + vmax / a : 2.0 * std::sqrt(dist / a);
    ArmConfig c;
    JointVelocities v{};
    double t = 0.0, reached = -1.0;
    while (t < t_min + 5.0) {
      std::tie(c, v) = step_arm(c, target, dt, m, v);
      t += dt;
      if (reached < 0.0 && std::abs(c.shoulder - dist) <= 1e-3 && v[1] == 0.0) reached = t;
      ASSERT_LE(std::abs(v[1]), vmax + 1e-12);
    }
    ASSERT_GT(reached, 0.0) << dist;
    EXPECT_GE(reached, t_min - dt);
    EXPECT_LE(reached, t_min + 1.0);
    EXPECT_NEAR(c.shoulder, dist, 1e-3);
  }
}

TEST(StepArm, NeverLeavesJointLimits) {
  Rng rng(12);
  const ArmLimits lim;
  const JointMotionLimits m;
  ArmConfig c = travel_configuration();
  JointVelocities v{};
  for (int k = 0; k < 200; ++k) {
    std::array<double, ArmConfig::kJoints> q{};
    for (auto& x : q) x = rng.uniform(-5.0, 5.0);
    const ArmConfig target = ArmConfig::from_array(q);
    for (int s = 0; s < 40; ++s) {
      std::tie(c, v) = step_arm(c, target, 0.05, m, v, lim);
      ASSERT_TRUE(lim.contains(c));
    }
  }
}
