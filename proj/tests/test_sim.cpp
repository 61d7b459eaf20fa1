#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <Eigen/Geometry>

#include "cdtm/error.hpp"
#include "cdtm/sim.hpp"
#include "support.hpp"

using namespace cdtm;

TEST(Sim, NoiseLevels) {
  EXPECT_NEAR(image_noise_sigma(400, 60.0), 1.443e-3, 1e-6);
  const Scenario s = build_scenario(test::small_params(1));
  EXPECT_DOUBLE_EQ(s.noise.sigma_h, 2.4);
  EXPECT_NEAR(s.noise.sigma_l, 0.5 * 2.0 * std::tan(M_PI / 6) / 400.0, 1e-15);
  ScenarioParams p = test::small_params(1);
  p.noise_scale = 0.0;
  EXPECT_EQ(build_scenario(p).noise.sigma_l, 0.0);
}

TEST(Sim, NominalScenarioGeometry) {
  const Scenario s = nominal_scenario(5);
  EXPECT_EQ(s.n_features(), 170);
  EXPECT_NEAR(s.pose1_true.p.z() - s.grid.mean_height(), 500.0, 1e-9);
  // the 300 m relief is set on a finer base lattice, so 30 m nodes see
  // slightly less of it
  EXPECT_LE(s.grid.max_height() - s.grid.min_height(), 300.0 + 1e-9);
  EXPECT_GT(s.grid.max_height() - s.grid.min_height(), 270.0);
  EXPECT_NEAR((s.pose1_true.p - s.truth().pose2().p).norm(), 40.0, 1e-9);
  const double tan_half = std::tan(M_PI / 6);
  const Pose p2 = s.truth().pose2();
  for (int i = 0; i < s.n_features(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    EXPECT_LE(std::hypot(s.q1[k].x(), s.q1[k].y()), tan_half + 1e-12);
    const Vec3 c2 = to_camera(p2, s.ground[k]);
    EXPECT_LE(std::hypot(c2.x(), c2.y()), tan_half * c2.z() + 1e-9);
    EXPECT_NEAR(s.ground[k].z(), height_at(s.grid, s.ground[k].x(), s.ground[k].y()), 1e-6);
  }
}

TEST(Sim, BuildIsDeterministic) {
  const Scenario a = build_scenario(test::small_params(9));
  const Scenario b = build_scenario(test::small_params(9));
  EXPECT_EQ(a.truth().flatten(), b.truth().flatten());
  ASSERT_EQ(a.ground.size(), b.ground.size());
  for (std::size_t i = 0; i < a.ground.size(); ++i) EXPECT_EQ(a.ground[i], b.ground[i]);
  EXPECT_NE(a.truth().flatten(), build_scenario(test::small_params(10)).truth().flatten());
}

TEST(Sim, InvalidParameters) {
  ScenarioParams p;
  p.fov_deg = 0.0;
  EXPECT_THROW(build_scenario(p), Error);
  p = {};
  p.n_features = 400 * 400 + 1;
  EXPECT_THROW(build_scenario(p), Error);
  p = {};
  p.altitude = 2e5;  // footprint far wider than the terrain
  try {
    build_scenario(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientVisibleTerrain);
  }
}

TEST(Sim, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(1, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(1, 5), derive_seed(1, 5));
  EXPECT_NE(derive_seed(1, 5), derive_seed(2, 5));
}

TEST(Sim, ObservationNoiseStatistics) {
  ScenarioParams p = test::small_params(11, 170);
  const Scenario s = build_scenario(p);
  const auto clean = clean_observations(s);
  double sum = 0.0, sq = 0.0, hsum = 0.0, hsq = 0.0;
  int n = 0, m = 0;
  for (std::uint64_t k = 0; k < 40; ++k) {
    const ObservationSet o = generate_observations(s, k);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      for (double d : {o.obs[i].q2.x() - clean[i].q2.x(), o.obs[i].q2.y() - clean[i].q2.y()}) {
        sum += d;
        sq += d * d;
        ++n;
      }
      EXPECT_EQ(o.obs[i].q1.vec(), clean[i].q1.vec());
    }
    const Eigen::MatrixXd dh = o.estimator_grid.heights() - s.grid.heights();
    hsum += dh.sum();
    hsq += dh.squaredNorm();
    m += static_cast<int>(dh.size());
  }
  const double sl = s.noise.sigma_l;
  EXPECT_LT(std::abs(sum / n), 4.0 * sl / std::sqrt(n));
  EXPECT_NEAR(std::sqrt(sq / n), sl, 0.03 * sl);
  EXPECT_LT(std::abs(hsum / m), 4.0 * 2.4 / std::sqrt(m));
  EXPECT_NEAR(std::sqrt(hsq / m), 2.4, 0.01 * 2.4);
}

TEST(Sim, GenerateObservationsIsDeterministic) {
  const Scenario s = build_scenario(test::small_params(12));
  const ObservationSet a = generate_observations(s, 77), b = generate_observations(s, 77);
  for (std::size_t i = 0; i < a.obs.size(); ++i) EXPECT_EQ(a.obs[i].q2.vec(), b.obs[i].q2.vec());
  EXPECT_TRUE(a.estimator_grid == b.estimator_grid);
}

TEST(Sim, OutliersAreDisplacedAlongTheRay) {
  ScenarioParams p = test::small_params(13, 100);
  p.outlier_fraction = 0.1;
  const Scenario s = build_scenario(p);
  int count = 0;
  for (std::size_t i = 0; i < s.q1.size(); ++i) {
    if (!s.outlier[i]) {
      EXPECT_EQ(s.source[i], s.ground[i]);
      continue;
    }
    ++count;
    const double d = (s.source[i] - s.ground[i]).norm();
    EXPECT_GE(d, 100.0 - 1e-9);
    EXPECT_LE(d, 250.0 + 1e-9);
    const Vec3 ray = s.pose1_true.r.matrix() * s.q1[i].vec();
    EXPECT_LT(ray.normalized().cross((s.source[i] - s.pose1_true.p).normalized()).norm(), 1e-9);
  }
  EXPECT_EQ(count, 10);
}

TEST(Sim, PerturbationMagnitudes) {
  MonteCarloOptions o;
  const ParamVector t;
  const ParamVector g = perturb_guess(t, o, 3);
  EXPECT_NEAR(g.p1.norm(), 50.0, 1e-9);
  EXPECT_NEAR(g.p12.norm(), 50.0, 1e-9);
  EXPECT_NEAR(std::abs(g.a1.phi), 2.0 * M_PI / 180.0, 1e-12);
  EXPECT_NEAR(std::abs(g.a12.psi), 2.0 * M_PI / 180.0, 1e-12);
}

TEST(Sim, SerialAndParallelTrialsAreIdentical) {
  const Scenario s = build_scenario(test::small_params(14, 120));
  MonteCarloOptions o;
  o.trials = 6;
  o.exec = Exec::Serial;
  const auto a = run_trials(s, o);
  o.exec = Exec::Parallel;
  const auto b = run_trials(s, o);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].error.cwiseEqual(b[i].error).all());
    EXPECT_EQ(a[i].iterations, b[i].iterations);
    EXPECT_EQ(a[i].seed, b[i].seed);
  }
}

TEST(Sim, ZeroNoiseMonteCarloHasNoSpread) {
  ScenarioParams p = test::small_params(15, 170);
  p.noise_scale = 0.0;
  MonteCarloOptions o;
  o.trials = 8;
  o.gate = false;
  const MonteCarloResult r = monte_carlo(build_scenario(p), o);
  EXPECT_EQ(r.converged, 8);
  EXPECT_LT(r.empirical_theta.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Sim, SummaryLeavesOutRejectedTrials) {
  std::vector<TrialRecord> t(4);
  for (int i = 0; i < 4; ++i) {
    t[std::size_t(i)].converged = true;
    t[std::size_t(i)].error = Vec12::Constant(i < 2 ? 1.0 * (2 * i - 1) : 0.0);
    t[std::size_t(i)].pose2_error = Vec6::Zero();
  }
  t[2].rejected = true;
  t[2].error = Vec12::Constant(1000.0);
  const MonteCarloResult r = summarize(t, {});
  EXPECT_EQ(r.converged, 4);
  EXPECT_EQ(r.accepted, 3);
  EXPECT_DOUBLE_EQ(r.rejection_rate, 0.25);
  EXPECT_NEAR(r.empirical_theta(0, 0), 1.0, 1e-12);  // (1 + 1 + 0) / (3 - 1)
}

TEST(Sim, SweepNamesRoundTrip) {
  for (auto p : {SweepParameter::NFeatures, SweepParameter::Resolution, SweepParameter::GridSpacing,
                 SweepParameter::TerrainAmplitude, SweepParameter::Baseline, SweepParameter::Fov}) {
    EXPECT_EQ(sweep_parameter_from_string(to_string(p)), p);
  }
  EXPECT_THROW(sweep_parameter_from_string("altitude"), Error);
  EXPECT_EQ(with_value({}, SweepParameter::Baseline, 95.0).baseline, 95.0);
}

TEST(Sim, SweepRecordsErrorsAndContinues) {
  MonteCarloOptions o;
  o.trials = 3;
  const SweepResult r = sweep(test::small_params(16), SweepParameter::NFeatures, {50, 1e6}, o);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_TRUE(r.points[0].result.has_value());
  EXPECT_FALSE(r.points[1].error.empty());
}
