#include "cdtm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "cdtm/error.hpp"

namespace cdtm {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// The terrain is always generated at this spacing (or finer, when the grid
// itself is finer) and resampled, so grid-spacing sweeps see one landscape.
constexpr double kBaseSpacing = 10.0;

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

void check_params(const ScenarioParams& p) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
  };
  require(p.extent > 0.0, "extent must be positive");
  require(p.grid_spacing > 0.0 && p.grid_spacing < p.extent, "grid spacing must lie in (0, extent)");
  require(p.elevation_range >= 0.0, "elevation range must be non-negative");
  require(p.roughness > 0.0 && p.roughness < 1.0, "roughness must lie in (0, 1)");
  require(p.altitude > 0.0, "altitude must be positive");
  require(p.baseline >= 0.0, "baseline must be non-negative");
  require(p.rotation_deg >= 0.0 && p.rotation_deg < 90.0, "rotation must lie in [0, 90) degrees");
  require(p.tilt_deg >= 0.0 && p.tilt_deg < 45.0, "tilt must lie in [0, 45) degrees");
  require(p.centre_jitter >= 0.0, "centre jitter must be non-negative");
  require(p.n_features >= 1, "at least one feature is required");
  require(p.resolution >= 1, "resolution must be positive");
  require(static_cast<double>(p.n_features) <= static_cast<double>(p.resolution) * p.resolution,
          "more features than image pixels");
  require(p.fov_deg > 0.0 && p.fov_deg < 180.0, "field of view must lie in (0, 180) degrees");
  require(p.pixel_fraction >= 0.0 && p.noise_scale >= 0.0 && p.height_noise_scale >= 0.0,
          "noise parameters must be non-negative");
  require(p.outlier_fraction >= 0.0 && p.outlier_fraction <= 1.0, "outlier fraction must lie in [0, 1]");
  require(p.outlier_depth_min >= 0.0 && p.outlier_depth_min <= p.outlier_depth_max,
          "outlier depth range is invalid");
}

TerrainGrid make_terrain(const ScenarioParams& p) {
  const double base_spacing = std::min(kBaseSpacing, p.grid_spacing);
  const int nodes = static_cast<int>(std::floor(p.extent / base_spacing + 1e-9)) + 1;
  const TerrainGrid base = fractal_terrain(nodes, nodes, base_spacing, p.elevation_range, p.terrain_seed, p.roughness);
  return p.grid_spacing == base_spacing ? base : resample(base, p.grid_spacing);
}

bool in_fov(const Vec3& c, double tan_half) {
  return c.z() > 1e-6 && std::hypot(c.x(), c.y()) <= tan_half * c.z();
}

// Frame-2 visibility: in front, inside the cone, and not hidden by terrain.
bool visible(const TerrainGrid& grid, const Pose& pose, const Vec3& g, double tan_half) {
  if (!in_fov(to_camera(pose, g), tan_half)) return false;
  const Vec3 d = g - pose.p;
  try {
    const SurfacePoint hit = raycast(grid, pose.p, d);
    return (hit.g - g).norm() <= 1e-3 * d.norm();
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

double image_noise_sigma(int resolution, double fov_deg, double pixel_fraction) {
  if (resolution < 1 || !(fov_deg > 0.0 && fov_deg < 180.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid resolution or field of view");
  }
  return pixel_fraction * 2.0 * std::tan(0.5 * fov_deg * kDeg) / resolution;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Scenario build_scenario(const ScenarioParams& params) {
  check_params(params);
  Scenario s{params, make_terrain(params), {}, {}, {}, {}, {}, {}, {}};
  const TerrainGrid& grid = s.grid;
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sym = [&](double half) { return half * (2.0 * unit(rng) - 1.0); };

  const double cx = 0.5 * (grid.x_min() + grid.x_max()) + sym(params.centre_jitter);
  const double cy = 0.5 * (grid.y_min() + grid.y_max()) + sym(params.centre_jitter);
  if (!grid.contains(cx, cy)) throw Error(ErrorCode::InvalidArgument, "camera outside the terrain");
  const double tilt = params.tilt_deg * kDeg;
  const EulerAngles a1{wrap_angle(std::numbers::pi + sym(tilt)), sym(tilt), sym(std::numbers::pi)};
  s.pose1_true = Pose{Vec3(cx, cy, grid.mean_height() + params.altitude), rotation_from_euler(a1)};
  if (s.pose1_true.p.z() <= height_at(grid, cx, cy)) {
    throw Error(ErrorCode::InvalidArgument, "camera below the terrain");
  }

  const double heading = sym(std::numbers::pi);
  const Vec3 d(params.baseline * std::cos(heading), params.baseline * std::sin(heading), 0.0);
  const Vec3 axis = random_unit(rng) * (params.rotation_deg * kDeg);
  const Rotation r12 = rotation_from_euler({axis.x(), axis.y(), axis.z()});
  s.motion_true = RigidMotion{-(r12.matrix() * s.pose1_true.r.matrix().transpose() * d), r12};
  const Pose pose2 = compose_second_pose(s.pose1_true, s.motion_true);
  if (!grid.contains(pose2.p.x(), pose2.p.y()) || pose2.p.z() <= height_at(grid, pose2.p.x(), pose2.p.y())) {
    throw Error(ErrorCode::InvalidArgument, "second camera outside or below the terrain");
  }

  s.noise = NoiseModel{params.noise_scale * image_noise_sigma(params.resolution, params.fov_deg, params.pixel_fraction),
                       params.noise_scale * params.height_noise_scale * height_noise_sigma(params.grid_spacing)};

  // Candidates consume a fixed number of draws each, so the accepted list for
  // n features is a prefix of the list for any larger n.
  const double tan_half = std::tan(0.5 * params.fov_deg * kDeg);
  const auto n = static_cast<std::size_t>(params.n_features);
  const std::size_t max_attempts = 1000 * n + 1000;
  for (std::size_t attempt = 0; attempt < max_attempts && s.q1.size() < n; ++attempt) {
    const double r = tan_half * std::sqrt(unit(rng));
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const ImageRay q1(r * std::cos(phi), r * std::sin(phi));
    Vec3 g;
    try {
      g = raycast(grid, s.pose1_true.p, s.pose1_true.r * q1.vec()).g;
    } catch (const Error&) {
      continue;
    }
    if (!visible(grid, pose2, g, tan_half)) continue;
    s.q1.push_back(q1);
    s.ground.push_back(g);
  }
  if (s.q1.size() < n) {
    throw Error(ErrorCode::InsufficientVisibleTerrain, "could not place " + std::to_string(n) +
                                                           " features visible in both frames");
  }
  s.source = s.ground;
  s.outlier.assign(n, false);

  // Outliers: the point seen in frame 2 lies further along (or short of) the
  // first-frame ray than the terrain, as when the ray is anchored on the
  // wrong hill.
  const auto k = static_cast<std::size_t>(std::lround(params.outlier_fraction * static_cast<double>(n)));
  if (k > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_real_distribution<double> depth(params.outlier_depth_min, params.outlier_depth_max);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t i = order[j];
      const Vec3 ray = (s.pose1_true.r * s.q1[i].vec()).normalized();
      for (int tries = 0; tries < 20; ++tries) {
        const double shift = (unit(rng) < 0.5 ? -1.0 : 1.0) * depth(rng);
        const Vec3 moved = s.ground[i] + shift * ray;
        if (to_camera(s.pose1_true, moved).z() > 1e-6 && in_fov(to_camera(pose2, moved), tan_half)) {
          s.source[i] = moved;
          s.outlier[i] = true;
          break;
        }
      }
    }
  }
  return s;
}

Scenario nominal_scenario(std::uint64_t seed) {
  ScenarioParams p;
  p.seed = seed;
  return build_scenario(p);
}

std::vector<FeatureObservation> clean_observations(const Scenario& s) {
  const Pose pose2 = compose_second_pose(s.pose1_true, s.motion_true);
  std::vector<FeatureObservation> obs;
  obs.reserve(s.q1.size());
  for (std::size_t i = 0; i < s.q1.size(); ++i) obs.push_back({s.q1[i], project_to_image(pose2, s.source[i])});
  return obs;
}

ObservationSet generate_observations(const Scenario& s, std::uint64_t noise_seed) {
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Separate streams keep image noise independent of the grid size.
  std::mt19937_64 image_rng(derive_seed(noise_seed, 0));
  std::vector<FeatureObservation> obs = clean_observations(s);
  for (auto& o : obs) {
    const double ex = s.noise.sigma_l * gauss(image_rng);
    const double ey = s.noise.sigma_l * gauss(image_rng);
    o.q2 = ImageRay(o.q2.vec().x() + ex, o.q2.vec().y() + ey);
  }

  std::mt19937_64 dtm_rng(derive_seed(noise_seed, 1));
  Eigen::MatrixXd h = s.grid.heights();
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    for (Eigen::Index c = 0; c < h.cols(); ++c) h(r, c) += s.noise.sigma_h * gauss(dtm_rng);
  }
  return {std::move(obs), s.truth(), TerrainGrid(s.grid.origin(), s.grid.spacing(), std::move(h))};
}

Mat12 perturbation_covariance(const MonteCarloOptions& opts) {
  const double vp = opts.init_position_offset * opts.init_position_offset / 3.0;
  const double vm = opts.init_motion_offset * opts.init_motion_offset / 3.0;
  const double a = opts.init_angle_offset_deg * kDeg;
  Vec12 d;
  d << vp, vp, vp, a * a, a * a, a * a, vm, vm, vm, a * a, a * a, a * a;
  return d.asDiagonal();
}

ParamVector perturb_guess(const ParamVector& truth, const MonteCarloOptions& opts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double a = opts.init_angle_offset_deg * kDeg;
  Vec12 delta;
  if (opts.perturbation == Perturbation::Fixed) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Vec3 dp1 = opts.init_position_offset * random_unit(rng);
    const Vec3 dp12 = opts.init_motion_offset * random_unit(rng);
    Vec6 da;
    for (int i = 0; i < 6; ++i) da(i) = unit(rng) < 0.5 ? -a : a;
    delta << dp1, da.head<3>(), dp12, da.tail<3>();
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Vec12 sd = perturbation_covariance(opts).diagonal().cwiseSqrt();
    for (int i = 0; i < 12; ++i) delta(i) = sd(i) * gauss(rng);
  }
  return ParamVector::unflatten(truth.flatten() + delta);
}

Vec6 pose2_error(const ParamVector& estimate, const ParamVector& truth) {
  const Pose e = estimate.pose2();
  const Pose t = truth.pose2();
  const EulerAngles ae = euler_from_rotation(e.r);
  const EulerAngles at = euler_from_rotation(t.r);
  Vec6 d;
  d << e.p - t.p, wrap_angle(ae.phi - at.phi), wrap_angle(ae.theta - at.theta), wrap_angle(ae.psi - at.psi);
  return d;
}

Mat12 gate_covariance(const MonteCarloOptions& opts, const AnalyticCovariance& analytic) {
  Mat12 c = perturbation_covariance(opts);
  if (analytic.valid) c += analytic.sigma_theta;
  return c;
}

TrialRecord run_trial(const Scenario& s, const MonteCarloOptions& opts, int index) {
  std::optional<Mat12> gate_cov;
  if (opts.gate) gate_cov = gate_covariance(opts, analytic_at_truth(s, opts.analytic_model));
  return run_trial(s, opts, index, gate_cov);
}

TrialRecord run_trial(const Scenario& s, const MonteCarloOptions& opts, int index,
                      const std::optional<Mat12>& gate_cov) {
  TrialRecord rec;
  rec.index = index;
  rec.seed = derive_seed(opts.master_seed, static_cast<std::uint64_t>(index));
  try {
    const ObservationSet data = generate_observations(s, derive_seed(rec.seed, 0));
    const ParamVector theta0 = perturb_guess(data.truth, opts, derive_seed(rec.seed, 1));
    SolverOptions so = opts.solver;
    // Trials are the unit of parallelism; each solve runs serially.
    so.exec = Exec::Serial;
    so.prior_cov = gate_cov;
    const SolveReport r = solve(theta0, data.obs, data.estimator_grid, so);
    rec.converged = r.converged;
    rec.degenerate = r.degenerate;
    rec.rejected = r.rejected;
    rec.failure = r.failure;
    rec.iterations = r.iterations;
    rec.lm_iterations = r.lm_iterations;
    rec.anchor_passes = r.anchor_passes;
    rec.cost_steps = static_cast<int>(r.cost_history.size());
    rec.cost_decreases = r.cost_decreases;
    rec.condition_number = r.condition_number;
    rec.final_cost = r.final_cost;
    if (so.prior_cov) rec.gate_statistic = gate_statistic(theta0, r.theta_hat, *so.prior_cov);
    rec.error = param_difference(r.theta_hat, data.truth);
    rec.pose2_error = pose2_error(r.theta_hat, data.truth);
  } catch (const Error& e) {
    rec.converged = false;
    rec.failure = e.code();
  }
  return rec;
}

std::vector<TrialRecord> run_trials(const Scenario& s, const MonteCarloOptions& opts) {
  if (opts.trials < 0) throw Error(ErrorCode::InvalidArgument, "trial count must be non-negative");
  std::vector<TrialRecord> out(static_cast<std::size_t>(opts.trials));
  const std::optional<Mat12> gate_cov =
      opts.gate ? std::optional<Mat12>(gate_covariance(opts, analytic_at_truth(s, opts.analytic_model)))
                : std::nullopt;
  if (opts.exec == Exec::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < opts.trials; ++i) out[static_cast<std::size_t>(i)] = run_trial(s, opts, i, gate_cov);
  } else {
    for (int i = 0; i < opts.trials; ++i) out[static_cast<std::size_t>(i)] = run_trial(s, opts, i, gate_cov);
  }
  return out;
}

AnalyticCovariance analytic_at_truth(const Scenario& s, GroundErrorModel model) {
  AnalyticCovariance a;
  const ParamVector truth = s.truth();
  const std::vector<FeatureObservation> obs = clean_observations(s);
  std::vector<FeatureAnchor> anchors;
  anchors.reserve(obs.size());
  for (const Vec3& g : s.ground) anchors.push_back({g, normal_at(s.grid, g.x(), g.y())});
  try {
    a.condition_number = condition_number(jacobian_theta(truth, obs, anchors, Exec::Serial));
    const CovarianceReport r = analyze(truth, obs, anchors, s.noise, s.grid, model, Exec::Serial);
    a.sigma_theta = r.sigma_theta;
    a.sigma_c2 = r.sigma_c2;
    a.valid = true;
  } catch (const Error&) {
    a.valid = false;
  }
  return a;
}

MonteCarloResult summarize(std::vector<TrialRecord> trials, const AnalyticCovariance& analytic) {
  MonteCarloResult m;
  m.trials = std::move(trials);
  m.analytic = analytic;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto total = static_cast<double>(m.trials.size());

  int degenerate = 0, rejected = 0, finite_cond = 0;
  double cond_sum = 0.0;
  Vec12 sum = Vec12::Zero();
  Vec6 sum2 = Vec6::Zero();
  for (const auto& t : m.trials) {
    degenerate += t.degenerate ? 1 : 0;
    rejected += t.rejected ? 1 : 0;
    if (std::isfinite(t.condition_number) && t.condition_number > 0.0) {
      cond_sum += t.condition_number;
      ++finite_cond;
    }
    if (!t.converged) continue;
    ++m.converged;
    if (t.rejected) continue;
    ++m.accepted;
    sum += t.error;
    sum2 += t.pose2_error;
  }
  m.convergence_rate = total > 0 ? m.converged / total : 0.0;
  m.degenerate_rate = total > 0 ? degenerate / total : 0.0;
  m.rejection_rate = total > 0 ? rejected / total : 0.0;
  m.mean_condition = finite_cond > 0 ? cond_sum / finite_cond : nan;

  if (m.accepted < 2) {
    m.mean_error = m.accepted == 1 ? sum : Vec12::Constant(nan);
    m.empirical_theta.setConstant(nan);
    m.empirical_c2.setConstant(nan);
    return m;
  }
  m.mean_error = sum / m.accepted;
  const Vec6 mean2 = sum2 / m.accepted;
  for (const auto& t : m.trials) {
    if (!t.converged || t.rejected) continue;
    const Vec12 d = t.error - m.mean_error;
    const Vec6 d2 = t.pose2_error - mean2;
    m.empirical_theta.noalias() += d * d.transpose();
    m.empirical_c2.noalias() += d2 * d2.transpose();
  }
  m.empirical_theta /= (m.accepted - 1);
  m.empirical_c2 /= (m.accepted - 1);
  return m;
}

MonteCarloResult monte_carlo(const Scenario& s, const MonteCarloOptions& opts) {
  if (opts.trials < 2) throw Error(ErrorCode::InvalidArgument, "at least two trials are required");
  MonteCarloResult m = summarize(run_trials(s, opts), analytic_at_truth(s, opts.analytic_model));
  if (m.accepted < 2) throw Error(ErrorCode::AllTrialsDiverged, "fewer than two trials converged and passed the gate");
  return m;
}

Eigen::Matrix<double, 18, 1> MonteCarloResult::empirical_std() const {
  Eigen::Matrix<double, 18, 1> s;
  s << empirical_theta.diagonal().cwiseSqrt(), empirical_c2.diagonal().cwiseSqrt();
  return s;
}

Eigen::Matrix<double, 18, 1> MonteCarloResult::analytic_std() const {
  Eigen::Matrix<double, 18, 1> s;
  if (!analytic.valid) return s.setConstant(std::numeric_limits<double>::quiet_NaN());
  s << analytic.sigma_theta.diagonal().cwiseSqrt(), analytic.sigma_c2.diagonal().cwiseSqrt();
  return s;
}

double MonteCarloResult::max_relative_deviation() const {
  const auto e = empirical_std();
  const auto a = analytic_std();
  double worst = 0.0;
  for (int i = 0; i < 18; ++i) {
    const double dev = std::abs(e(i) / a(i) - 1.0);
    if (!std::isfinite(dev)) return std::numeric_limits<double>::quiet_NaN();
    worst = std::max(worst, dev);
  }
  return worst;
}

double MonteCarloResult::position_std() const {
  return std::sqrt(empirical_c2.topLeftCorner<3, 3>().trace());
}

double MonteCarloResult::rotation_std() const {
  return std::sqrt(empirical_theta.block<3, 3>(9, 9).trace());
}

std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::NFeatures: return "n_features";
    case SweepParameter::Resolution: return "resolution";
    case SweepParameter::GridSpacing: return "grid_spacing";
    case SweepParameter::TerrainAmplitude: return "terrain_amplitude";
    case SweepParameter::Baseline: return "baseline";
    case SweepParameter::Fov: return "fov";
  }
  return "unknown";
}

SweepParameter sweep_parameter_from_string(const std::string& name) {
  for (auto p : {SweepParameter::NFeatures, SweepParameter::Resolution, SweepParameter::GridSpacing,
                 SweepParameter::TerrainAmplitude, SweepParameter::Baseline, SweepParameter::Fov}) {
    if (to_string(p) == name) return p;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown sweep parameter '" + name + "'");
}

ScenarioParams with_value(const ScenarioParams& base, SweepParameter p, double value) {
  ScenarioParams s = base;
  switch (p) {
    case SweepParameter::NFeatures: s.n_features = static_cast<int>(std::lround(value)); break;
    case SweepParameter::Resolution: s.resolution = static_cast<int>(std::lround(value)); break;
    case SweepParameter::GridSpacing: s.grid_spacing = value; break;
    case SweepParameter::TerrainAmplitude: s.elevation_range = value; break;
    case SweepParameter::Baseline: s.baseline = value; break;
    case SweepParameter::Fov:
      s.fov_deg = value;
      s.rotation_deg = std::min(s.rotation_deg, value / 6.0);
      s.baseline = std::min(s.baseline, 0.5 * s.altitude * std::tan(0.5 * value * kDeg));
      break;
  }
  return s;
}

SweepResult sweep(const ScenarioParams& base, SweepParameter p, const std::vector<double>& values,
                  const MonteCarloOptions& opts) {
  SweepResult r;
  r.parameter = p;
  r.values = values;
  for (double v : values) {
    SweepPoint point;
    point.value = v;
    try {
      point.result = monte_carlo(build_scenario(with_value(base, p, v)), opts);
    } catch (const Error& e) {
      point.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    r.points.push_back(std::move(point));
  }
  return r;
}

std::vector<FovPoint> fov_study(const ScenarioParams& base, const std::vector<double>& fov_values_deg,
                                const MonteCarloOptions& opts) {
  std::vector<FovPoint> out;
  for (double fov : fov_values_deg) {
    FovPoint pt;
    pt.fov_deg = fov;
    try {
      if (!(fov > 1.0 && fov < 90.0)) throw Error(ErrorCode::InvalidArgument, "field of view outside (1, 90) degrees");
      const Scenario s = build_scenario(with_value(base, SweepParameter::Fov, fov));
      const MonteCarloResult m = summarize(run_trials(s, opts), analytic_at_truth(s, opts.analytic_model));
      pt.trials = static_cast<int>(m.trials.size());
      pt.convergence_rate = m.convergence_rate;
      pt.degenerate_rate = m.degenerate_rate;
      pt.rejection_rate = m.rejection_rate;
      pt.mean_condition = m.mean_condition;
      pt.analytic_condition = m.analytic.condition_number;
    } catch (const Error& e) {
      pt.error = std::string(to_string(e.code())) + ": " + e.what();
    }
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace cdtm
