#include <gtest/gtest.h>

#include <random>

#include "cdtm/error.hpp"
#include "cdtm/sim.hpp"
#include "cdtm/solver.hpp"
#include "support.hpp"

using namespace cdtm;

TEST(Huber, WeightsAndCost) {
  Eigen::VectorXd f(9);
  f << 0.3, 0.4, 0, /**/ 3, 4, 0, /**/ 0, 0, 0;  // norms 0.5, 5, 0
  const auto w = huber_weights(f, 1.0);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_DOUBLE_EQ(w[1], 0.2);
  EXPECT_DOUBLE_EQ(w[2], 1.0);
  EXPECT_DOUBLE_EQ(robust_cost(f, 1.0), 0.25 + (2 * 5 - 1) + 0);
  EXPECT_DOUBLE_EQ(robust_cost(f, std::nullopt), 25.25);
}

TEST(Huber, DeltaFromMad) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(15);
  // per-feature norms 1, 2, 3, 4, 100: median about zero is 3
  const double norms[] = {1, 2, 3, 4, 100};
  for (int i = 0; i < 5; ++i) f(3 * i) = norms[i];
  EXPECT_NEAR(huber_delta_from_mad(f), 1.345 * 3.0 / 0.6745, 1e-12);
}

TEST(Solver, DampedSolveLimits) {
  Mat12 h = Mat12::Zero();
  Vec12 g;
  for (int i = 0; i < 12; ++i) {
    h(i, i) = i + 1.0;
    g(i) = 1.0;
  }
  const Vec12 gn = damped_solve(h, g, 0.0);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(gn(i), -1.0 / (i + 1.0), 1e-14);
  // large lambda: scaled gradient descent, -g / (lambda diag)
  const Vec12 lm = damped_solve(h, g, 1e6);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(lm(i) * 1e6 * (i + 1.0), -1.0, 1e-5);
}

TEST(Solver, StepNorm) {
  Vec12 s = Vec12::Zero();
  s(0) = 3.0;
  s(3) = 4.0 / 500.0;
  EXPECT_NEAR(step_norm(s, 500.0), 5.0, 1e-12);
}

TEST(Solver, GaussNewtonZeroAtTruth) {
  const Scenario sc = build_scenario(test::small_params(21));
  const auto obs = clean_observations(sc);
  const auto anchors = test::true_anchors(sc);
  const Vec12 step = gauss_newton_step(sc.truth(), obs, anchors, {}, 1e8);
  EXPECT_LT(step.norm(), 1e-9);
}

TEST(Solver, GaussNewtonSolvesLinearProblemInOneStep) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Random(36, 12);
  const Vec12 x = Vec12::LinSpaced(-1.0, 2.0);
  const Eigen::VectorXd f = j * x;
  const Vec12 step = gauss_newton_step(j, f, {}, 1e8);
  EXPECT_LT((step + x).norm(), 1e-10);
  Eigen::MatrixXd bad = j;
  bad.col(4) = bad.col(3);
  EXPECT_THROW(gauss_newton_step(bad, f, {}, 1e8), Error);
}

TEST(Solver, DegeneracyCheck) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Identity(24, 12);
  EXPECT_FALSE(degeneracy_check(j, 1e8).degenerate);
  j(11, 11) = 1e-9;
  const Degeneracy d = degeneracy_check(j, 1e8);
  EXPECT_TRUE(d.degenerate);
  EXPECT_NEAR(d.condition_number, 1e9, 1.0);
}

TEST(Solver, InitialErrorGate) {
  const Mat12 prior = Mat12::Identity();
  ParamVector a, b;
  EXPECT_DOUBLE_EQ(gate_statistic(a, b, prior), 0.0);
  EXPECT_FALSE(initial_error_gate(a, b, prior));
  b.p1 = Vec3(5.0, 0.0, 0.0);  // 25 < 26.217
  EXPECT_DOUBLE_EQ(gate_statistic(a, b, prior), 25.0);
  EXPECT_FALSE(initial_error_gate(a, b, prior));
  b.p1 = Vec3(5.2, 0.0, 0.0);  // 27.04
  EXPECT_TRUE(initial_error_gate(a, b, prior));
  Mat12 bad = prior;
  bad(3, 3) = -1.0;
  try {
    initial_error_gate(a, b, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveDefinitePrior);
  }
}

TEST(Solver, StartingAtTruthStopsImmediately) {
  const Scenario sc = build_scenario(test::small_params(22, 170));
  const auto obs = clean_observations(sc);
  const SolveReport r = solve(sc.truth(), obs, sc.grid);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 2);
  EXPECT_LT(r.final_cost, 1e-18);
}

TEST(Solver, ZeroNoiseRecoveryFromOffsetGuess) {
  for (std::uint64_t seed : {23u, 24u, 25u}) {
    const Scenario sc = build_scenario(test::small_params(seed, 170));
    const auto obs = clean_observations(sc);
    MonteCarloOptions mc;
    const ParamVector theta0 = perturb_guess(sc.truth(), mc, seed);
    const SolveReport r = solve(theta0, obs, sc.grid);
    ASSERT_TRUE(r.converged) << "seed " << seed;
    const Vec12 e = param_difference(r.theta_hat, sc.truth());
    EXPECT_LT(e.segment<3>(0).norm(), 1e-6);
    EXPECT_LT(e.segment<3>(6).norm(), 1e-6);
    EXPECT_LT(e.segment<3>(3).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(e.segment<3>(9).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Solver, SerialAndParallelSolvesAgree) {
  const Scenario sc = build_scenario(test::small_params(26, 120));
  const ObservationSet data = generate_observations(sc, 3);
  const ParamVector theta0 = perturb_guess(sc.truth(), {}, 4);
  SolverOptions o;
  o.exec = Exec::Serial;
  const SolveReport a = solve(theta0, data.obs, data.estimator_grid, o);
  o.exec = Exec::Parallel;
  const SolveReport b = solve(theta0, data.obs, data.estimator_grid, o);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_LT((a.theta_hat.flatten() - b.theta_hat.flatten()).norm(), 1e-9);
}

TEST(Solver, TooFewFeatures) {
  const Scenario sc = build_scenario(test::small_params(27));
  auto obs = clean_observations(sc);
  obs.resize(5);
  try {
    solve(sc.truth(), obs, sc.grid);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewFeatures);
  }
}

TEST(Solver, FlatTerrainIsDegenerate) {
  ScenarioParams p = test::small_params(28, 170);
  p.elevation_range = 0.0;
  const Scenario sc = build_scenario(p);
  const SolveReport r = solve(perturb_guess(sc.truth(), {}, 1), clean_observations(sc), sc.grid);
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.converged);
}

TEST(Solver, LmOnlyStepsThatLowerCost) {
  const Scenario sc = build_scenario(test::small_params(29, 100));
  const auto obs = clean_observations(sc);
  ParamVector t = sc.truth();
  t.p1 += Vec3(3, -2, 1);
  const auto anchors = anchor_features(t.pose1(), obs, sc.grid, Exec::Serial);
  const double before = residual_stack(t, obs, anchors, Exec::Serial).squaredNorm();
  const LmStep s = lm_step(t, obs, anchors, {}, 1e-3);
  EXPECT_LT(s.cost, before);
  EXPECT_LT(s.lambda, 1e-3);
}

TEST(Solver, HuberDownweightsOutliers) {
  ScenarioParams p = test::small_params(30, 170);
  p.outlier_fraction = 0.1;
  const Scenario sc = build_scenario(p);
  const auto obs = clean_observations(sc);
  SolverOptions o;
  o.robust = RobustMode::Huber;
  const SolveReport r = solve(perturb_guess(sc.truth(), {}, 2), obs, sc.grid, o);
  ASSERT_EQ(r.outlier_weights.size(), obs.size());
  double w_in = 0.0, w_out = 0.0;
  int n_out = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    (sc.outlier[i] ? w_out : w_in) += r.outlier_weights[i];
    n_out += sc.outlier[i];
  }
  ASSERT_GT(n_out, 0);
  EXPECT_LT(w_out / n_out, 0.5 * w_in / (static_cast<double>(obs.size()) - n_out));
}
