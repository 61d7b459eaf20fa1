#include "cdtm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cdtm/covariance.hpp"
#include "cdtm/kernels.hpp"

namespace cdtm {

namespace {

struct Linearization {
  Eigen::VectorXd f;
  Eigen::MatrixXd j;
};

Linearization linearize(const ParamVector& theta, std::span<const FeatureObservation> obs,
                        std::span<const FeatureAnchor> anchors, Exec exec) {
  const ThetaFrames frames(theta);
  const auto n = static_cast<Eigen::Index>(obs.size());
  Linearization lin{Eigen::VectorXd(3 * n), Eigen::MatrixXd(3 * n, 12)};
  std::vector<FeatureFault> faults;
  if (exec == Exec::Parallel) {
    kernels::omp::linearize(frames, obs, anchors, lin.f, lin.j, faults);
  } else {
    kernels::serial::linearize(frames, obs, anchors, lin.f, lin.j, faults);
  }
  throw_if_faults(std::move(faults), "linearization");
  return lin;
}

Eigen::VectorXd evaluate(const ParamVector& theta, std::span<const FeatureObservation> obs,
                         std::span<const FeatureAnchor> anchors, Exec exec) {
  return residual_stack(theta, obs, anchors, exec);
}

ParamVector apply(const ParamVector& theta, const Vec12& step) {
  return ParamVector::unflatten(theta.flatten() + step);
}

Eigen::MatrixXd weighted_rows(const Eigen::MatrixXd& j, std::span<const double> weights) {
  if (weights.empty()) return j;
  Eigen::MatrixXd wj = j;
  for (Eigen::Index i = 0; i < j.rows() / 3; ++i) {
    wj.middleRows<3>(3 * i) *= std::sqrt(weights[static_cast<std::size_t>(i)]);
  }
  return wj;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

std::vector<double> feature_norms(const Eigen::VectorXd& residuals) {
  std::vector<double> r(static_cast<std::size_t>(residuals.size() / 3));
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = residuals.segment<3>(3 * static_cast<Eigen::Index>(i)).norm();
  return r;
}

}  // namespace

double step_norm(const Vec12& step, double angle_scale) {
  Vec12 s = step;
  for (int i : {3, 4, 5, 9, 10, 11}) s(i) *= angle_scale;
  return s.norm();
}

std::vector<double> huber_weights(const Eigen::VectorXd& residuals, double delta) {
  if (!(delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "Huber delta must be positive");
  std::vector<double> w = feature_norms(residuals);
  for (double& r : w) r = r <= delta ? 1.0 : delta / r;
  return w;
}

double robust_cost(const Eigen::VectorXd& residuals, std::optional<double> delta) {
  if (!delta) return residuals.squaredNorm();
  double cost = 0.0;
  for (double r : feature_norms(residuals)) cost += r <= *delta ? r * r : 2.0 * *delta * r - *delta * *delta;
  return cost;
}

double huber_delta_from_mad(const Eigen::VectorXd& residuals) {
  const double mad = median(feature_norms(residuals));
  const double delta = 1.345 * mad / 0.6745;
  return delta > 0.0 ? delta : std::numeric_limits<double>::min();
}

Degeneracy degeneracy_check(const Eigen::MatrixXd& j_theta, double cond_threshold) {
  const double c = condition_number(j_theta);
  return {c, !(c <= cond_threshold)};
}

Vec12 gauss_newton_step(const Eigen::MatrixXd& j, const Eigen::VectorXd& f, std::span<const double> weights,
                        double cond_threshold, Exec exec) {
  const Degeneracy d = degeneracy_check(weighted_rows(j, weights), cond_threshold);
  if (d.degenerate) throw Error(ErrorCode::IllConditioned, "normal equations are ill-conditioned");
  const kernels::NormalEquations ne = kernels::normal_equations(j, f, weights, exec);
  return ne.h.ldlt().solve(-ne.g);
}

Vec12 gauss_newton_step(const ParamVector& theta, std::span<const FeatureObservation> obs,
                        std::span<const FeatureAnchor> anchors, std::span<const double> weights,
                        double cond_threshold) {
  const Linearization lin = linearize(theta, obs, anchors, Exec::Serial);
  return gauss_newton_step(lin.j, lin.f, weights, cond_threshold, Exec::Serial);
}

Vec12 damped_solve(const Mat12& h, const Vec12& g, double lambda) {
  Vec12 diag = h.diagonal();
  const double floor = 1e-9 * std::max(diag.maxCoeff(), std::numeric_limits<double>::min());
  diag = diag.cwiseMax(floor);
  Mat12 a = h;
  a.diagonal() += lambda * diag;
  return a.ldlt().solve(-g);
}

LmStep lm_step(const ParamVector& theta, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, std::span<const double> weights, double lambda, double scale,
               double lambda_max, std::optional<double> huber_delta) {
  const Linearization lin = linearize(theta, obs, anchors, Exec::Serial);
  const double cost = robust_cost(lin.f, huber_delta);
  const kernels::NormalEquations ne = kernels::serial::normal_equations(lin.j, lin.f, weights);
  while (lambda <= lambda_max) {
    const Vec12 step = damped_solve(ne.h, ne.g, lambda);
    double trial = std::numeric_limits<double>::infinity();
    try {
      trial = robust_cost(evaluate(apply(theta, step), obs, anchors, Exec::Serial), huber_delta);
    } catch (const Error&) {
    }
    if (trial < cost) return {step, lambda / scale, trial};
    lambda *= scale;
  }
  throw Error(ErrorCode::LambdaOverflow, "Levenberg-Marquardt damping overflow");
}

double gate_statistic(const ParamVector& theta0, const ParamVector& theta_hat, const Mat12& prior_cov) {
  const Eigen::LLT<Mat12> llt(0.5 * (prior_cov + prior_cov.transpose()));
  if (llt.info() != Eigen::Success || !prior_cov.allFinite()) {
    throw Error(ErrorCode::NonPositiveDefinitePrior, "prior covariance is not positive definite");
  }
  const Vec12 d = param_difference(theta_hat, theta0);
  return d.dot(llt.solve(d));
}

bool initial_error_gate(const ParamVector& theta0, const ParamVector& theta_hat, const Mat12& prior_cov) {
  return gate_statistic(theta0, theta_hat, prior_cov) > kGateChi2_99_12;
}

namespace {

struct InnerResult {
  ParamVector theta;
  bool converged = false;
  std::optional<ErrorCode> failure;
};

// Residuals, anchors and cost at one parameter vector.
struct Evaluation {
  ParamVector theta;
  std::vector<FeatureAnchor> anchors;
  Eigen::VectorXd f;
  double cost = std::numeric_limits<double>::infinity();
};

class Estimator {
 public:
  Estimator(std::span<const FeatureObservation> obs, const TerrainGrid& grid, const SolverOptions& opts,
            SolveReport& report)
      : obs_(obs), grid_(grid), opts_(opts), report_(report) {}

  void reanchor(const ParamVector& theta) {
    report_.anchors = anchor_features(theta.pose1(), obs_, grid_, opts_.exec);
  }

  InnerResult run(const ParamVector& start, std::optional<double> delta) {
    return opts_.scheme == SolverScheme::Joint ? run_joint(start, delta) : run_alternating(start, delta);
  }

 private:
  bool retrace() const { return opts_.anchor_mode == AnchorMode::PerIteration; }

  bool small_step(double sn, double cost) const {
    // In the zero-residual regime Gauss-Newton converges quadratically, so a
    // small step at near-zero cost leaves an error far below the step.
    return sn < opts_.step_tol || (cost < opts_.residual_tol && sn < 1e3 * opts_.step_tol);
  }

  std::vector<double> weights_for(const Eigen::VectorXd& f, std::optional<double> delta) const {
    return delta ? huber_weights(f, *delta) : std::vector<double>{};
  }

  void record(double before, double after) {
    report_.cost_history.push_back(before);
    if (after < before) ++report_.cost_decreases;
  }

  // With per-iteration anchoring the rays are traced again at theta, so the
  // cost is that of the terrain itself rather than of fixed tangent planes.
  std::optional<Evaluation> evaluate_at(const ParamVector& theta, std::optional<double> delta) const {
    Evaluation e{theta, {}, {}};
    try {
      e.anchors = retrace() ? anchor_features(theta.pose1(), obs_, grid_, opts_.exec) : report_.anchors;
      e.f = evaluate(theta, obs_, e.anchors, opts_.exec);
    } catch (const Error&) {
      return std::nullopt;
    }
    e.cost = robust_cost(e.f, delta);
    return e;
  }

  InnerResult finish(InnerResult out, const Evaluation& at) {
    out.theta = at.theta;
    if (retrace()) report_.anchors = at.anchors;
    return out;
  }

  InnerResult run_joint(const ParamVector& start, std::optional<double> delta) {
    InnerResult out{start, false, std::nullopt};
    std::optional<Evaluation> first = evaluate_at(start, delta);
    if (!first) {
      out.failure = retrace() ? ErrorCode::AnchoringFailed : ErrorCode::DegenerateDepth;
      return out;
    }
    Evaluation cur = std::move(*first);
    Evaluation best = cur;
    bool use_lm = false;
    double lambda = opts_.lm_lambda0;
    int stalled = 0;

    while (report_.iterations < opts_.max_iters) {
      Linearization lin;
      try {
        lin = linearize(cur.theta, obs_, cur.anchors, opts_.exec);
      } catch (const Error& e) {
        out.failure = e.code();
        return finish(out, best);
      }
      const std::vector<double> w = weights_for(lin.f, delta);

      if (!use_lm) {
        Vec12 step;
        try {
          step = gauss_newton_step(lin.j, lin.f, w, opts_.cond_threshold, opts_.exec);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::IllConditioned) throw;
          use_lm = true;
          continue;
        }
        ++report_.iterations;
        std::optional<Evaluation> next = evaluate_at(apply(cur.theta, step), delta);
        if (!next) {
          record(cur.cost, std::numeric_limits<double>::infinity());
          use_lm = true;
          cur = best;
          continue;
        }
        record(cur.cost, next->cost);
        cur = std::move(*next);
        // A stall is an iteration that fails to improve on the best cost so
        // far; plain Gauss-Newton can cycle between terrain cells without
        // two consecutive increases.
        if (cur.cost < best.cost) {
          best = cur;
          stalled = 0;
        } else {
          ++stalled;
        }
        if (small_step(step_norm(step, opts_.angle_scale), cur.cost)) {
          out.converged = true;
          return finish(out, cur);
        }
        if (stalled >= opts_.gn_fail_iters) {
          use_lm = true;
          cur = best;
        }
        continue;
      }

      const kernels::NormalEquations ne = kernels::normal_equations(lin.j, lin.f, w, opts_.exec);
      ++report_.iterations;
      ++report_.lm_iterations;
      bool accepted = false;
      while (lambda <= opts_.lm_lambda_max) {
        const Vec12 step = damped_solve(ne.h, ne.g, lambda);
        if (!step.allFinite()) {
          lambda *= opts_.lm_scale;
          continue;
        }
        const double sn = step_norm(step, opts_.angle_scale);
        if (sn < opts_.step_tol) {
          record(cur.cost, cur.cost);
          out.converged = true;
          return finish(out, cur);
        }
        std::optional<Evaluation> trial = evaluate_at(apply(cur.theta, step), delta);
        if (trial && trial->cost < cur.cost) {
          const double before = cur.cost;
          record(cur.cost, trial->cost);
          cur = std::move(*trial);
          best = cur;
          lambda /= opts_.lm_scale;
          accepted = true;
          if (small_step(sn, cur.cost) || before - cur.cost < opts_.cost_rtol * before) {
            out.converged = true;
            return finish(out, cur);
          }
          break;
        }
        lambda *= opts_.lm_scale;
      }
      if (!accepted) {
        out.failure = ErrorCode::LambdaOverflow;
        return finish(out, cur);
      }
    }
    out.failure = ErrorCode::NotConverged;
    return finish(out, best);
  }

  InnerResult run_alternating(const ParamVector& start, std::optional<double> delta) {
    InnerResult out{start, false, std::nullopt};
    ParamVector& theta = out.theta;
    static constexpr int kAngleCols[6] = {3, 4, 5, 9, 10, 11};
    while (report_.iterations < opts_.max_iters) {
      const ParamVector before = theta;
      double cost = 0.0;
      try {
        if (retrace()) reanchor(theta);
        cost = robust_cost(evaluate(theta, obs_, report_.anchors, opts_.exec), delta);
        const LinearSystem sys = linear_system(rotation_from_euler(theta.a1), rotation_from_euler(theta.a12),
                                               obs_, report_.anchors);
        std::tie(theta.p12, theta.p1) = sys.solve();

        const Linearization lin = linearize(theta, obs_, report_.anchors, opts_.exec);
        const std::vector<double> w = weights_for(lin.f, delta);
        Eigen::MatrixXd ja(lin.j.rows(), 6);
        for (int k = 0; k < 6; ++k) ja.col(k) = lin.j.col(kAngleCols[k]);
        const Eigen::MatrixXd wja = weighted_rows(ja, w);
        Eigen::VectorXd wf = lin.f;
        if (!w.empty()) {
          for (Eigen::Index i = 0; i < wf.size() / 3; ++i) wf.segment<3>(3 * i) *= std::sqrt(w[static_cast<std::size_t>(i)]);
        }
        if (condition_number(wja) > opts_.cond_threshold) {
          out.failure = ErrorCode::IllConditioned;
          return out;
        }
        const Eigen::VectorXd da = wja.colPivHouseholderQr().solve(-wf);
        Vec12 step = Vec12::Zero();
        for (int k = 0; k < 6; ++k) step(kAngleCols[k]) = da(k);
        theta = apply(theta, step);
      } catch (const Error& e) {
        out.failure = e.code();
        return out;
      }
      ++report_.iterations;
      double next_cost = std::numeric_limits<double>::infinity();
      try {
        next_cost = robust_cost(evaluate(theta, obs_, report_.anchors, opts_.exec), delta);
      } catch (const Error&) {
      }
      record(cost, next_cost);
      if (small_step(step_norm(param_difference(theta, before), opts_.angle_scale), next_cost)) {
        out.converged = true;
        if (retrace()) {
          try {
            reanchor(theta);
          } catch (const Error&) {
            out.failure = ErrorCode::AnchoringFailed;
            out.converged = false;
          }
        }
        return out;
      }
    }
    out.failure = ErrorCode::NotConverged;
    return out;
  }

  std::span<const FeatureObservation> obs_;
  const TerrainGrid& grid_;
  const SolverOptions& opts_;
  SolveReport& report_;
};

}  // namespace

SolveReport solve(const ParamVector& theta0, std::span<const FeatureObservation> obs, const TerrainGrid& grid,
                  const SolverOptions& opts) {
  if (obs.size() < 6) throw Error(ErrorCode::TooFewFeatures, "at least six correspondences are required");
  SolveReport report;
  Estimator est(obs, grid, opts, report);
  try {
    est.reanchor(theta0);
  } catch (const Error& e) {
    throw Error(ErrorCode::AnchoringFailed, std::string("initial anchoring failed: ") + e.what(), e.faults());
  }

  const bool robust = opts.robust == RobustMode::Huber;
  ParamVector theta = theta0;
  std::optional<double> delta;
  bool converged = false;
  std::optional<ErrorCode> failure;

  // Passes: with PerPass anchoring each pass re-traces the rays; in robust
  // mode each pass also re-estimates the Huber threshold from the residuals.
  for (int pass = 0; pass < opts.max_anchor_passes; ++pass) {
    ++report.anchor_passes;
    const ParamVector pass_start = theta;
    if (robust) {
      try {
        delta = opts.huber_delta ? *opts.huber_delta
                                 : huber_delta_from_mad(evaluate(theta, obs, report.anchors, opts.exec));
      } catch (const Error& e) {
        failure = e.code();
        break;
      }
    }
    const InnerResult inner = est.run(theta, delta);
    theta = inner.theta;
    if (inner.failure) {
      failure = inner.failure;
      break;
    }
    const double moved = step_norm(param_difference(theta, pass_start), opts.angle_scale);
    if (opts.anchor_mode == AnchorMode::PerPass) {
      try {
        est.reanchor(theta);
      } catch (const Error&) {
        failure = ErrorCode::AnchoringFailed;
        break;
      }
    } else if (opts.anchor_mode == AnchorMode::Once || !robust || opts.huber_delta) {
      converged = inner.converged;
      break;
    }
    if (inner.converged && moved < opts.anchor_tol) {
      converged = true;
      break;
    }
    if (report.iterations >= opts.max_iters) {
      failure = ErrorCode::NotConverged;
      break;
    }
  }
  if (!converged && !failure) failure = ErrorCode::NotConverged;

  report.theta_hat = theta;
  try {
    const Linearization lin = linearize(theta, obs, report.anchors, opts.exec);
    if (robust) {
      if (!opts.huber_delta) delta = huber_delta_from_mad(lin.f);
      report.outlier_weights = huber_weights(lin.f, *delta);
    }
    report.final_cost = robust_cost(lin.f, delta);
    const Degeneracy d = degeneracy_check(lin.j, opts.cond_threshold);
    report.condition_number = d.condition_number;
    report.degenerate = d.degenerate;
  } catch (const Error& e) {
    report.final_cost = std::numeric_limits<double>::infinity();
    report.condition_number = std::numeric_limits<double>::infinity();
    report.degenerate = true;
    if (!failure) failure = e.code();
  }
  if (opts.prior_cov) report.rejected = initial_error_gate(theta0, theta, *opts.prior_cov);
  report.converged = converged && !report.degenerate;
  if (report.degenerate && !failure) failure = ErrorCode::IllConditioned;
  report.failure = report.converged ? std::nullopt : failure;
  return report;
}

}  // namespace cdtm
