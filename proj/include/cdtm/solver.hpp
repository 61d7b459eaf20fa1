#pragma once

// Nonlinear least-squares estimation of the twelve pose and ego-motion
// parameters.
//
// The solver anchors every first-frame ray in the terrain from the current
// estimate and linearizes the constraint about those anchors. By default the
// rays are traced again at every evaluated parameter vector, so the cost is
// |F|^2 against the terrain itself and the tangent-plane Jacobian is its
// exact derivative. Gauss-Newton hands over to Levenberg-Marquardt when
// J^T W J is ill-conditioned or `gn_fail_iters` consecutive iterations fail
// to improve on the best cost seen.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cdtm/constraint.hpp"
#include "cdtm/dtm.hpp"
#include "cdtm/error.hpp"

namespace cdtm {

enum class RobustMode { Off, Huber };

enum class AnchorMode {
  Once,          // trace from theta0 only
  PerPass,       // re-trace after each converged inner solve
  PerIteration,  // re-trace at every evaluated parameter vector (default)
};

enum class SolverScheme {
  Joint,        // all twelve parameters per step
  Alternating,  // linear position solve for fixed rotations, then a rotation step
};

struct SolverOptions {
  int max_iters = 100;  // total over all anchoring passes
  int gn_fail_iters = 2;
  double step_tol = 1e-8;      // scaled step norm, see angle_scale
  double residual_tol = 1e-10; // on |F|^2
  // An accepted step that lowers the cost by less than this fraction ends
  // the iteration: on a bilinear DTM the cost has kinks at cell edges where
  // Levenberg-Marquardt otherwise creeps with ever shorter steps.
  double cost_rtol = 1e-10;
  double lm_lambda0 = 1e-3;
  double lm_scale = 10.0;
  double lm_lambda_max = 1e12;
  RobustMode robust = RobustMode::Off;
  std::optional<double> huber_delta;  // unset: derived from the residual MAD
  double cond_threshold = 1e8;
  // Meters per radian when measuring steps: angles weighted by the nominal
  // 500 m altitude.
  double angle_scale = 500.0;
  AnchorMode anchor_mode = AnchorMode::PerIteration;
  int max_anchor_passes = 12;
  double anchor_tol = 1e-6;  // scaled displacement of a pass
  SolverScheme scheme = SolverScheme::Joint;
  std::optional<Mat12> prior_cov;  // enables the initial-error gate
  Exec exec = Exec::Parallel;

  bool operator==(const SolverOptions&) const = default;
};

struct SolveReport {
  ParamVector theta_hat;
  int iterations = 0;
  int lm_iterations = 0;
  int anchor_passes = 0;
  bool converged = false;
  double final_cost = 0.0;
  double condition_number = 0.0;
  std::vector<double> outlier_weights;  // empty unless robust
  bool degenerate = false;
  bool rejected = false;
  std::optional<ErrorCode> failure;  // why converged is false, when known
  std::vector<FeatureAnchor> anchors;
  std::vector<double> cost_history;    // cost before each iteration
  int cost_decreases = 0;              // iterations that lowered the cost
};

/// Throws TooFewFeatures (n < 6) or AnchoringFailed. Non-convergence is
/// reported through SolveReport, not thrown.
SolveReport solve(const ParamVector& theta0, std::span<const FeatureObservation> obs, const TerrainGrid& grid,
                  const SolverOptions& opts = {});

/// Scaled parameter-step norm: angles multiplied by angle_scale.
double step_norm(const Vec12& step, double angle_scale);

/// Delta = -(J^T W J)^-1 J^T W F. Throws IllConditioned when the weighted
/// Jacobian's condition number exceeds cond_threshold.
Vec12 gauss_newton_step(const ParamVector& theta, std::span<const FeatureObservation> obs,
                        std::span<const FeatureAnchor> anchors, std::span<const double> weights,
                        double cond_threshold = 1e8);

/// Same step from a precomputed residual and Jacobian.
Vec12 gauss_newton_step(const Eigen::MatrixXd& j, const Eigen::VectorXd& f, std::span<const double> weights,
                        double cond_threshold, Exec exec = Exec::Serial);

struct LmStep {
  Vec12 update;
  double lambda;
  double cost;  // cost after the update
};

/// One damped step with accept/reject: lambda is divided by `scale` on
/// success and multiplied by it while the trial cost does not decrease.
/// Throws LambdaOverflow when lambda exceeds lambda_max.
LmStep lm_step(const ParamVector& theta, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, std::span<const double> weights, double lambda,
               double scale = 10.0, double lambda_max = 1e12, std::optional<double> huber_delta = std::nullopt);

/// Undamped-limit-safe damped solve (H + lambda diag(H)) x = -g. Diagonal
/// entries are floored at 1e-9 of the largest so exactly null columns still
/// receive damping.
Vec12 damped_solve(const Mat12& h, const Vec12& g, double lambda);

/// w_i = 1 when |f_i| <= delta, delta / |f_i| otherwise.
std::vector<double> huber_weights(const Eigen::VectorXd& residuals, double delta);

/// Huber cost sum rho(|f_i|) with rho(r) = r^2 inside delta and
/// 2 delta r - delta^2 outside; plain |F|^2 when delta is unset.
double robust_cost(const Eigen::VectorXd& residuals, std::optional<double> delta);

/// 1.345 * MAD / 0.6745 of the per-feature residual norms, with the MAD
/// taken about zero.
double huber_delta_from_mad(const Eigen::VectorXd& residuals);

struct Degeneracy {
  double condition_number;
  bool degenerate;
};

Degeneracy degeneracy_check(const Eigen::MatrixXd& j_theta, double cond_threshold);

/// 99% quantile of chi-square with 12 degrees of freedom.
inline constexpr double kGateChi2_99_12 = 26.217;

/// Rejects when (theta_hat - theta0)^T prior^-1 (theta_hat - theta0)
/// exceeds the 99% chi-square quantile. Throws NonPositiveDefinitePrior.
bool initial_error_gate(const ParamVector& theta0, const ParamVector& theta_hat, const Mat12& prior_cov);

/// Squared Mahalanobis distance used by the gate.
double gate_statistic(const ParamVector& theta0, const ParamVector& theta_hat, const Mat12& prior_cov);

}  // namespace cdtm
