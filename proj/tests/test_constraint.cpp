#include <gtest/gtest.h>

#include <random>

#include "cdtm/constraint.hpp"
#include "cdtm/covariance.hpp"
#include "cdtm/error.hpp"
#include "cdtm/sim.hpp"
#include "support.hpp"

using namespace cdtm;

TEST(Constraint, FlattenRoundTripAndWrappedDifference) {
  ParamVector t;
  t.p1 = Vec3(1, 2, 3);
  t.a1 = {0.1, 0.2, 0.3};
  t.p12 = Vec3(4, 5, 6);
  t.a12 = {0.4, 0.5, 0.6};
  const Vec12 v = t.flatten();
  EXPECT_EQ(v(3), 0.1);
  EXPECT_EQ(v(11), 0.6);
  EXPECT_EQ(ParamVector::unflatten(v).flatten(), v);
  ParamVector u = t;
  u.a1.psi = 0.3 + 2 * M_PI;
  EXPECT_NEAR(param_difference(u, t).norm(), 0.0, 1e-12);
}

TEST(Constraint, FromPosesRoundTrip) {
  const Scenario s = build_scenario(test::small_params(2));
  const ParamVector t = s.truth();
  EXPECT_LT((t.pose1().p - s.pose1_true.p).norm(), 1e-12);
  EXPECT_LT((t.motion().r12.matrix() - s.motion_true.r12.matrix()).norm(), 1e-12);
}

TEST(Constraint, ZeroResidualAtTruth) {
  const Scenario s = build_scenario(test::small_params(3));
  const auto obs = clean_observations(s);
  const auto anchors = test::true_anchors(s);
  const Eigen::VectorXd f = residual_stack(s.truth(), obs, anchors, Exec::Serial);
  EXPECT_EQ(f.size(), 3 * s.n_features());
  EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Constraint, ResidualOrthogonalToQ2) {
  const Scenario s = build_scenario(test::small_params(4));
  const auto obs = clean_observations(s);
  const auto anchors = test::true_anchors(s);
  ParamVector t = s.truth();
  t.p1 += Vec3(20, -15, 10);
  t.a12.psi += 0.02;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Vec3 f = residual_single(t, obs[i], anchors[i]);
    EXPECT_LT(std::abs(obs[i].q2.vec().dot(f)), 1e-14);
    EXPECT_LE(f.norm(), 1.0 + 1e-12);
  }
}

TEST(Constraint, SerialAndParallelResidualsAgree) {
  const Scenario s = build_scenario(test::small_params(5));
  const auto obs = clean_observations(s);
  const auto anchors = test::true_anchors(s);
  ParamVector t = s.truth();
  t.p12 += Vec3(1, 2, 3);
  EXPECT_EQ(residual_stack(t, obs, anchors, Exec::Serial), residual_stack(t, obs, anchors, Exec::Parallel));
}

TEST(Constraint, AnchoringFindsTrueGroundFromTruePose) {
  const Scenario s = build_scenario(test::small_params(6));
  const auto a = anchor_features(s.pose1_true, s.q1, s.grid, Exec::Serial);
  int matched = 0;
  for (std::size_t i = 0; i < a.size(); ++i) matched += (a[i].g_e - s.ground[i]).norm() < 1e-6;
  EXPECT_EQ(matched, s.n_features());
}

TEST(Constraint, AnchoringFailuresAreAggregated) {
  const TerrainGrid g = test::plane_grid(10, 10, 30.0, 0.0, 0.0, 0.0);
  const Pose pose{Vec3(135, 135, 100), rotation_from_euler({M_PI, 0.0, 0.0})};
  const std::vector<ImageRay> rays{ImageRay(0, 0), ImageRay(50, 0), ImageRay(0.1, 0), ImageRay(0, -50)};
  try {
    anchor_features(pose, rays, g, Exec::Serial);
    FAIL();
  } catch (const Error& e) {
    ASSERT_EQ(e.faults().size(), 2u);
    EXPECT_EQ(e.faults()[0].index, 1u);
    EXPECT_EQ(e.faults()[1].index, 3u);
  }
}

TEST(Constraint, LinearSystemRecoversPositions) {
  const Scenario s = build_scenario(test::small_params(7));
  const auto obs = clean_observations(s);
  const auto anchors = test::true_anchors(s);
  const LinearSystem ls = linear_system(s.pose1_true.r, s.motion_true.r12, obs, anchors);
  EXPECT_EQ(ls.a.rows(), 3 * s.n_features());
  const auto [p12, p1] = ls.solve();
  EXPECT_LT((p12 - s.motion_true.p12).norm(), 1e-6);
  EXPECT_LT((p1 - s.pose1_true.p).norm(), 1e-6);
}

TEST(Constraint, LinearSystemNeedsThreeFeatures) {
  const Scenario s = build_scenario(test::small_params(8));
  const auto obs = clean_observations(s);
  const auto anchors = test::true_anchors(s);
  EXPECT_THROW(linear_system(s.pose1_true.r, s.motion_true.r12, std::span(obs).first(2),
                             std::span(anchors).first(2)),
               Error);
}

TEST(Constraint, FlatTerrainLosesRank) {
  // On a plane the anchors slide along it with p1, so the twelve-parameter
  // Jacobian has a null direction.
  ScenarioParams p = test::small_params(9);
  p.elevation_range = 0.0;
  const Scenario s = build_scenario(p);
  const auto obs = clean_observations(s);
  const auto anchors = test::true_anchors(s);
  const Eigen::MatrixXd j = jacobian_theta(s.truth(), obs, anchors, Exec::Serial);
  EXPECT_GT(condition_number(j), 1e8);
}
