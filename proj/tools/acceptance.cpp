// Acceptance run: one PASS/FAIL line per criterion, followed by
// supplementary measurements. Exits 1 when any criterion fails.
//
// Every threshold, trial count and seed is fixed below so that two runs
// print the same numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cdtm/cli.hpp"
#include "cdtm/covariance.hpp"
#include "cdtm/error.hpp"
#include "cdtm/report.hpp"
#include "cdtm/sim.hpp"
#include "cdtm/solver.hpp"

using namespace cdtm;
namespace fs = std::filesystem;

namespace {

constexpr double kJacobianRelTol = 1e-5;
constexpr int kJacobianScenarios = 50;
constexpr double kJacobianSeconds = 60.0;

constexpr int kRecoveryScenarios = 100;
constexpr double kRecoveryPosTol = 1e-6;    // m
constexpr double kRecoveryAngleTol = 1e-8;  // rad

constexpr int kCovarianceTrials = 200;
constexpr double kCovarianceRelTol = 0.20;

constexpr int kSweepTrials = 100;
constexpr double kMonotoneSlack = 0.10;
constexpr double kSaturationRatio = 1.10;
constexpr double kRotationSpread = 0.15;

constexpr int kFovTrials = 40;
constexpr double kFovNarrowMax = 0.50;
constexpr double kFovWideMin = 0.95;

constexpr int kOutlierRuns = 20;
constexpr double kRobustFactor = 3.0;
constexpr double kPlainFactor = 10.0;

constexpr int kLinearTrials = 1000;
constexpr double kLinearRelTol = 0.10;

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void verdict(int id, bool pass, const std::string& what, double secs) {
  std::printf("criterion %2d %s  %s  (%.1f s)\n", id, pass ? "PASS" : "FAIL", what.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++failures;
}

void note(const std::string& what) {
  std::printf("  %s\n", what.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Eigen::MatrixXd central_diff(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn,
                             const Eigen::VectorXd& x, const Eigen::VectorXd& h) {
  const Eigen::VectorXd f0 = fn(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, b = x;
    a(k) += h(k);
    b(k) -= h(k);
    j.col(k) = (fn(a) - fn(b)) / (2 * h(k));
  }
  return j;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& fd) {
  return (a - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-300);
}

std::vector<FeatureAnchor> true_anchors(const Scenario& s) {
  std::vector<FeatureAnchor> a;
  for (const Vec3& g : s.ground) a.push_back({g, normal_at(s.grid, g.x(), g.y())});
  return a;
}

void criterion_jacobians() {
  const auto t0 = std::chrono::steady_clock::now();
  Eigen::VectorXd h(12);
  h << 1e-4, 1e-4, 1e-4, 1e-7, 1e-7, 1e-7, 1e-4, 1e-4, 1e-4, 1e-7, 1e-7, 1e-7;
  double worst_theta = 0, worst_q = 0, worst_g = 0, worst_c2 = 0, worst_h = 0;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int k = 0; k < kJacobianScenarios; ++k) {
    ScenarioParams p;
    p.seed = 1000 + static_cast<std::uint64_t>(k);
    p.n_features = 40;
    const Scenario s = build_scenario(p);
    const auto obs = clean_observations(s);
    const auto anchors = true_anchors(s);
    ParamVector t = s.truth();
    t.p1 += 10.0 * Vec3(nd(rng), nd(rng), nd(rng));
    t.p12 += 5.0 * Vec3(nd(rng), nd(rng), nd(rng));
    t.a1.phi += 0.01 * nd(rng);
    t.a1.theta += 0.01 * nd(rng);
    t.a12.psi += 0.01 * nd(rng);

    const Eigen::MatrixXd j = jacobian_theta(t, obs, anchors, Exec::Serial);
    const Eigen::MatrixXd fd = central_diff(
        [&](const Eigen::VectorXd& x) {
          return residual_stack(ParamVector::unflatten(x), obs, anchors, Exec::Serial);
        },
        t.flatten(), h);
    worst_theta = std::max(worst_theta, rel_err(j, fd));

    const DataJacobian jd = jacobian_data(t, obs, anchors);
    const Mat3 r1 = t.pose1().r.matrix();
    for (std::size_t i = 0; i < obs.size(); i += 5) {
      const Eigen::MatrixXd fq = central_diff(
          [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
            FeatureObservation o = obs[i];
            o.q2 = ImageRay(x(0), x(1));
            return residual_single(t, o, anchors[i]);
          },
          Eigen::Vector2d(obs[i].q2.x(), obs[i].q2.y()), Eigen::Vector2d::Constant(1e-7));
      worst_q = std::max(worst_q, rel_err(jd.jq[i].leftCols<2>(), fq));
      const Eigen::MatrixXd fg = central_diff(
          [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
            FeatureAnchor a = anchors[i];
            a.g_e = x;
            return residual_single(t, obs[i], a);
          },
          anchors[i].g_e, Eigen::Vector3d::Constant(1e-4));
      worst_g = std::max(worst_g, rel_err(jd.jg[i], fg));
      // ray/plane intersection moved by a height change of the plane
      const Vec3 d = r1 * obs[i].q1.vec(), n = anchors[i].n, g = anchors[i].g_e;
      const Eigen::MatrixXd fh = central_diff(
          [&](const Eigen::VectorXd& dh) -> Eigen::VectorXd {
            const Vec3 gz = g + Vec3(0, 0, dh(0));
            return t.p1 + d * (n.dot(gz - t.p1) / n.dot(d));
          },
          Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 1e-3));
      worst_h = std::max(worst_h, rel_err(ground_height_sensitivity(obs[i].q1.vec(), n, r1), fh));
    }
    const Eigen::MatrixXd fc = central_diff(
        [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
          const Pose p2 = ParamVector::unflatten(x).pose2();
          const EulerAngles e = euler_from_rotation(p2.r);
          Eigen::VectorXd out(6);
          out << p2.p, e.phi, e.theta, e.psi;
          return out;
        },
        t.flatten(), h);
    worst_c2 = std::max(worst_c2, rel_err(second_pose_jacobian(t), fc));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({worst_theta, worst_q, worst_g, worst_c2, worst_h});
  verdict(1, worst < kJacobianRelTol && secs < kJacobianSeconds,
          "Jacobians vs central differences over 50 scenarios: worst rel " + fmt("%.2e", worst) + " < 1e-5", secs);
  char buf[200];
  std::snprintf(buf, sizeof buf, "J_theta %.2e  J_q %.2e  J_G %.2e  J_C2 %.2e  dG/dh %.2e", worst_theta, worst_q,
                worst_g, worst_c2, worst_h);
  note(buf);
}

void criterion_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  int ok = 0;
  double worst_p = 0, worst_a = 0;
  MonteCarloOptions mc;  // 50 m / 2 deg fixed-magnitude offsets
  for (int k = 0; k < kRecoveryScenarios; ++k) {
    ScenarioParams p;
    p.seed = 2000 + static_cast<std::uint64_t>(k);
    p.noise_scale = 0.0;
    const Scenario s = build_scenario(p);
    const ParamVector truth = s.truth();
    const ParamVector theta0 = perturb_guess(truth, mc, derive_seed(77, static_cast<std::uint64_t>(k)));
    try {
      const SolveReport r = solve(theta0, clean_observations(s), s.grid);
      const Vec12 e = param_difference(r.theta_hat, truth);
      const double ep = std::max(e.segment<3>(0).cwiseAbs().maxCoeff(), e.segment<3>(6).cwiseAbs().maxCoeff());
      const double ea = std::max(e.segment<3>(3).cwiseAbs().maxCoeff(), e.segment<3>(9).cwiseAbs().maxCoeff());
      worst_p = std::max(worst_p, ep);
      worst_a = std::max(worst_a, ea);
      ok += r.converged && ep < kRecoveryPosTol && ea < kRecoveryAngleTol;
    } catch (const Error&) {
    }
  }
  verdict(2, ok == kRecoveryScenarios,
          "zero-noise recovery " + std::to_string(ok) + "/100 within 1e-6 m, 1e-8 rad" +
              fmt(" (worst %.1e m", worst_p) + fmt(", %.1e rad)", worst_a),
          seconds_since(t0));
}

void print_ratios(const MonteCarloResult& r) {
  const auto e = r.empirical_std(), a = r.analytic_std();
  std::string line;
  for (int i = 0; i < 18; ++i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s %.2f%s", std_names()[std::size_t(i)].c_str(), e(i) / a(i),
                  i == 11 ? "\n  " : i == 17 ? "" : "  ");
    line += buf;
  }
  note(line);
}

double cost_decrease_fraction(const MonteCarloResult& r) {
  double steps = 0, down = 0;
  for (const auto& t : r.trials) {
    steps += t.cost_steps;
    down += t.cost_decreases;
  }
  return steps > 0 ? down / steps : 0.0;
}

void criterion_covariance() {
  const auto t0 = std::chrono::steady_clock::now();
  const Scenario s = nominal_scenario(1);
  MonteCarloOptions mc;
  mc.trials = kCovarianceTrials;
  const MonteCarloResult r = monte_carlo(s, mc);
  verdict(3, r.max_relative_deviation() <= kCovarianceRelTol,
          "nominal Monte-Carlo vs analytic stds, 200 trials: max |ratio - 1| " +
              fmt("%.3f <= 0.20", r.max_relative_deviation()),
          seconds_since(t0));
  note("empirical/analytic std ratios:");
  print_ratios(r);
  note(fmt("accepted %.0f/200", r.accepted) + fmt("  converged %.0f", r.converged) +
       fmt("  gate-rejected %.1f%%", 100 * r.rejection_rate) +
       fmt("  cost-decreasing iterations %.1f%%", 100 * cost_decrease_fraction(r)));

  // the same trials against the node-interpolated ground model
  MonteCarloResult node = summarize(r.trials, analytic_at_truth(s, GroundErrorModel::NodeInterpolated));
  note(fmt("node-interpolated ground model: max |ratio - 1| %.3f", node.max_relative_deviation()));
}

std::vector<double> position_stds(const SweepResult& sw) {
  std::vector<double> v;
  for (const auto& p : sw.points) v.push_back(p.result ? p.result->position_std() : NAN);
  return v;
}

std::vector<double> analytic_position_stds(const SweepResult& sw) {
  std::vector<double> v;
  for (const auto& p : sw.points) {
    v.push_back(p.result && p.result->analytic.valid
                    ? std::sqrt(p.result->analytic.sigma_c2.topLeftCorner<3, 3>().trace())
                    : NAN);
  }
  return v;
}

std::string list(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%g: %.3g", i ? ", " : "", xs[i], ys[i]);
    s += buf;
  }
  return s;
}

// Each step may rise by at most `slack` of the previous value.
bool non_increasing(const std::vector<double>& v, double slack) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] <= (1 + slack) * v[i - 1])) return false;
  }
  return true;
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] < v[i - 1])) return false;
  }
  return true;
}

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

MonteCarloOptions sweep_options() {
  MonteCarloOptions mc;
  mc.trials = kSweepTrials;
  return mc;
}

void criterion_features() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> n = {10, 25, 50, 100, 150, 200, 300};
  const SweepResult sw = sweep(ScenarioParams{}, SweepParameter::NFeatures, n, sweep_options());
  const auto v = position_stds(sw);
  const double ratio = v[4] / v[6];
  verdict(4, non_increasing(v, kMonotoneSlack) && ratio < kSaturationRatio,
          "position std vs features non-increasing (10% slack), std(150)/std(300) " + fmt("%.3f < 1.10", ratio),
          seconds_since(t0));
  note("position std (m): " + list(n, v));
  note("analytic       (m): " + list(n, analytic_position_stds(sw)));
}

void criterion_spacing() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> sp = {10, 30, 60, 100, 190};
  const SweepResult sw = sweep(ScenarioParams{}, SweepParameter::GridSpacing, sp, sweep_options());
  const auto v = position_stds(sw);
  verdict(5, strictly_increasing(v), "position std increasing with grid spacing (sigma_h = 0.08 spacing)",
          seconds_since(t0));
  note("position std (m): " + list(sp, v));
  note("analytic       (m): " + list(sp, analytic_position_stds(sw)));
}

void criterion_relief() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> range = {50, 150, 250, 350, 450};
  const SweepResult sw = sweep(ScenarioParams{}, SweepParameter::TerrainAmplitude, range, sweep_options());
  const auto v = position_stds(sw);
  std::vector<double> rot;
  for (const auto& p : sw.points) rot.push_back(p.result ? p.result->rotation_std() : NAN);
  const double lo = *std::min_element(rot.begin(), rot.end()), hi = *std::max_element(rot.begin(), rot.end());
  const double spread = hi / lo - 1.0;
  verdict(6, strictly_decreasing(v) && spread < kRotationSpread,
          "position std decreasing with relief; ego-motion rotation std spread " + fmt("%.3f < 0.15", spread),
          seconds_since(t0));
  note("position std (m): " + list(range, v));
  note("analytic       (m): " + list(range, analytic_position_stds(sw)));
  for (double& r : rot) r *= 180.0 / M_PI;
  note("rotation std (deg): " + list(range, rot));
}

void criterion_baseline() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> b = {5, 20, 40, 95};
  const SweepResult sw = sweep(ScenarioParams{}, SweepParameter::Baseline, b, sweep_options());
  const auto v = position_stds(sw);
  verdict(7, strictly_decreasing(v), "position std decreasing with baseline", seconds_since(t0));
  note("position std (m): " + list(b, v));
  note("analytic       (m): " + list(b, analytic_position_stds(sw)));
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

void criterion_degeneracy() {
  const auto t0 = std::chrono::steady_clock::now();
  MonteCarloOptions mc;
  mc.trials = kFovTrials;
  // The estimator's map is exactly flat; image noise stays on.
  ScenarioParams flat;
  flat.elevation_range = 0.0;
  flat.height_noise_scale = 0.0;
  const auto flat_trials = run_trials(build_scenario(flat), mc);
  int flagged = 0;
  for (const auto& t : flat_trials) flagged += t.degenerate;
  // Node noise on the map makes it 2.4 m rough, which is no longer flat.
  flat.height_noise_scale = 1.0;
  const auto rough_trials = run_trials(build_scenario(flat), mc);
  int rough_flagged = 0;
  std::vector<double> conds;
  for (const auto& t : rough_trials) {
    rough_flagged += t.degenerate;
    conds.push_back(t.condition_number);
  }
  const auto fov = fov_study(ScenarioParams{}, {5.0, 60.0}, mc);
  const bool narrow = fov[0].error.empty() ? (fov[0].convergence_rate < kFovNarrowMax ||
                                              fov[0].degenerate_rate > kFovNarrowMax)
                                           : true;
  const bool wide = fov[1].error.empty() && fov[1].convergence_rate >= kFovWideMin;
  verdict(8, flagged == kFovTrials && narrow && wide,
          "flat terrain degenerate " + std::to_string(flagged) + "/" + std::to_string(kFovTrials) +
              fmt("; FOV 5 converged %.0f%%", 100 * fov[0].convergence_rate) +
              fmt(" degenerate %.0f%%", 100 * fov[0].degenerate_rate) +
              fmt("; FOV 60 converged %.1f%%", 100 * fov[1].convergence_rate),
          seconds_since(t0));
  if (!fov[0].error.empty()) note("FOV 5: " + fov[0].error);
  for (const auto& pt : fov) {
    if (pt.error.empty()) {
      note(fmt("FOV %.0f:", pt.fov_deg) + fmt(" gate-rejected %.0f%%", 100 * pt.rejection_rate) +
           fmt(", mean condition %.3g", pt.mean_condition) + fmt(", analytic condition %.3g", pt.analytic_condition));
    }
  }
  note("flat truth under a noisy map: degenerate " + std::to_string(rough_flagged) + "/" +
       std::to_string(kFovTrials) + fmt(", median condition number %.3g", median(conds)));
}

void criterion_outliers() {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioParams clean_p;
  ScenarioParams dirty_p;
  dirty_p.outlier_fraction = 0.10;
  const Scenario clean = build_scenario(clean_p), dirty = build_scenario(dirty_p);
  MonteCarloOptions mc;
  std::vector<double> e_clean, e_robust, e_plain;
  auto pos_error = [](const Scenario& s, const ObservationSet& data, const ParamVector& theta0,
                      const SolverOptions& o) {
    try {
      const SolveReport r = solve(theta0, data.obs, data.estimator_grid, o);
      return pose2_error(r.theta_hat, s.truth()).head<3>().norm();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  SolverOptions plain, robust;
  robust.robust = RobustMode::Huber;
  std::vector<double> t_clean, t_robust, t_plain;  // started at the truth
  for (int k = 0; k < kOutlierRuns; ++k) {
    const std::uint64_t seed = derive_seed(900, static_cast<std::uint64_t>(k));
    const ObservationSet dc = generate_observations(clean, derive_seed(seed, 0));
    const ObservationSet dd = generate_observations(dirty, derive_seed(seed, 0));
    const ParamVector theta0 = perturb_guess(clean.truth(), mc, derive_seed(seed, 1));
    e_clean.push_back(pos_error(clean, dc, theta0, plain));
    e_robust.push_back(pos_error(dirty, dd, theta0, robust));
    e_plain.push_back(pos_error(dirty, dd, theta0, plain));
    t_clean.push_back(pos_error(clean, dc, clean.truth(), plain));
    t_robust.push_back(pos_error(dirty, dd, clean.truth(), robust));
    t_plain.push_back(pos_error(dirty, dd, clean.truth(), plain));
  }
  const double c = median(e_clean), r = median(e_robust), p = median(e_plain);
  verdict(9, r < kRobustFactor * c && p > kPlainFactor * c,
          "10% outliers, median second-pose position error: clean " + fmt("%.2f m", c) + fmt(", Huber %.2f m", r) +
              fmt(" (%.2fx < 3)", r / c) + fmt(", plain %.2f m", p) + fmt(" (%.1fx > 10)", p / c),
          seconds_since(t0));
  const double tc = median(t_clean), tr = median(t_robust), tp = median(t_plain);
  note("same runs started at the truth: clean " + fmt("%.2f m", tc) + fmt(", Huber %.2fx", tr / tc) +
       fmt(", plain %.1fx", tp / tc));
}

std::string run_quiet(std::vector<std::string> args) {
  args.insert(args.begin(), "cdtm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return std::to_string(code);
}

void criterion_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path base = fs::temp_directory_path() / "cdtm_acceptance_determinism";
  fs::remove_all(base);
  const std::vector<std::vector<std::string>> commands = {
      {"montecarlo", "--trials", "12"},
      {"sweep", "--parameter", "baseline", "--values", "5,40", "--trials", "6"},
      {"fov", "--values", "8,60", "--trials", "6"},
      {"gen-scenario"},
  };
  const std::vector<std::string> files = {"trials.csv", "summary.csv", "sweep.csv", "sweep_trials.csv",
                                          "fov.csv",    "observations.csv"};
  bool same = true;
  int compared = 0;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::string codes[2];
    for (int rep = 0; rep < 2; ++rep) {
      std::vector<std::string> args = {"--out", (base / std::to_string(rep) / std::to_string(c)).string()};
      args.insert(args.end(), commands[c].begin(), commands[c].end());
      codes[rep] = run_quiet(args);
    }
    same = same && codes[0] == codes[1];
    for (const std::string& f : files) {
      const fs::path a = base / "0" / std::to_string(c) / f, b = base / "1" / std::to_string(c) / f;
      if (!fs::exists(a) && !fs::exists(b)) continue;
      same = same && fs::exists(a) && fs::exists(b) && load_text(a.string()) == load_text(b.string());
      ++compared;
    }
  }
  fs::remove_all(base);
  verdict(10, same && compared >= 6,
          "reruns produce byte-identical CSV (" + std::to_string(compared) + " files compared)", seconds_since(t0));
}

void supplementary_linear_regime() {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioParams p;
  p.noise_scale = 0.1;
  const Scenario s = build_scenario(p);
  MonteCarloOptions mc;
  mc.trials = kLinearTrials;
  const MonteCarloResult r = monte_carlo(s, mc);
  const MonteCarloResult node = summarize(r.trials, analytic_at_truth(s, GroundErrorModel::NodeInterpolated));
  std::printf("supplementary: noise x0.1, %d trials (%.1f s)\n", kLinearTrials, seconds_since(t0));
  note(fmt("point-independent ground model: max |ratio - 1| %.3f", r.max_relative_deviation()) +
       (r.max_relative_deviation() <= kLinearRelTol ? "  within 10%" : "  outside 10%"));
  note(fmt("node-interpolated ground model: max |ratio - 1| %.3f", node.max_relative_deviation()) +
       (node.max_relative_deviation() <= kLinearRelTol ? "  within 10%" : "  outside 10%"));
  note("node-model ratios:");
  print_ratios(node);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    criterion_jacobians();
    criterion_recovery();
    criterion_covariance();
    criterion_features();
    criterion_spacing();
    criterion_relief();
    criterion_baseline();
    criterion_degeneracy();
    criterion_outliers();
    criterion_determinism();
    supplementary_linear_regime();
  } catch (const std::exception& e) {
    std::printf("aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d of 10 criteria failed (%.0f s total)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
