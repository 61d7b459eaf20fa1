#pragma once

// Synthetic scenarios, Monte-Carlo validation of the covariance analysis and
// the sensitivity sweeps.
//
// A scenario fixes the true terrain, the true first pose and ego-motion, and
// the feature set (first-frame rays plus their ground points). Each trial
// then draws its own noise: Gaussian noise on the second-frame image
// coordinates, an independently perturbed copy of the DTM for the estimator,
// and a perturbed initial guess. Trial streams derive from (master seed,
// trial index) only, so trial i sees the same random numbers whatever the
// swept value and whatever the thread count.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cdtm/constraint.hpp"
#include "cdtm/covariance.hpp"
#include "cdtm/dtm.hpp"
#include "cdtm/geom.hpp"
#include "cdtm/solver.hpp"

namespace cdtm {

using Vec6 = Eigen::Matrix<double, 6, 1>;

/// Everything a scenario is built from. Defaults are the nominal setup:
/// 3 x 3 km terrain with 300 m relief on a 30 m grid, 500 m above the mean
/// terrain height, 170 features, 40 m baseline, 10 degree rotation, a
/// 400 x 400 image over a 60 degree field of view.
struct ScenarioParams {
  double extent = 3000.0;          // side of the square terrain, m
  double grid_spacing = 30.0;      // m
  double elevation_range = 300.0;  // max - min height, m
  double roughness = 0.55;         // fractal amplitude ratio per octave
  double altitude = 500.0;         // first camera above the mean terrain height, m
  double baseline = 40.0;          // |p2 - p1|, horizontal, m
  double rotation_deg = 10.0;      // |(phi12, theta12, psi12)|
  double tilt_deg = 3.0;           // max off-nadir roll/pitch of the first pose
  double centre_jitter = 100.0;    // max horizontal offset from the terrain centre, m
  int n_features = 170;
  int resolution = 400;    // pixels across the (square) image
  double fov_deg = 60.0;   // full cone angle
  double pixel_fraction = 0.5;  // image noise std in pixels
  double noise_scale = 1.0;     // multiplies both noise stds; 0 gives noiseless data
  double height_noise_scale = 1.0;  // further factor on the DTM height std only
  double outlier_fraction = 0.0;
  double outlier_depth_min = 100.0;  // outlier displacement along the ray, m
  double outlier_depth_max = 250.0;
  std::uint64_t seed = 1;          // pose, motion, features, outliers
  std::uint64_t terrain_seed = 7;  // fractal terrain

  bool operator==(const ScenarioParams&) const = default;
};

struct Scenario {
  ScenarioParams params;
  TerrainGrid grid;  // truth
  Pose pose1_true;
  RigidMotion motion_true;
  NoiseModel noise;
  std::vector<ImageRay> q1;         // first-frame rays
  std::vector<Vec3> ground;         // true ground points on the q1 rays
  std::vector<Vec3> source;         // points seen in frame 2 (ground, or displaced for outliers)
  std::vector<bool> outlier;

  int n_features() const { return static_cast<int>(q1.size()); }
  int image_resolution() const { return params.resolution; }
  double fov_deg() const { return params.fov_deg; }
  std::uint64_t seed() const { return params.seed; }
  ParamVector truth() const { return ParamVector::from_poses(pose1_true, motion_true); }
};

/// Image-plane std at unit focal length: pixel_fraction pixels of a
/// resolution-wide image spanning the field of view.
double image_noise_sigma(int resolution, double fov_deg, double pixel_fraction = 0.5);

/// Throws InsufficientVisibleTerrain when the feature count cannot be met,
/// InvalidArgument for out-of-range parameters.
Scenario build_scenario(const ScenarioParams& params);

Scenario nominal_scenario(std::uint64_t seed);

/// Seed of trial `index` under `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

struct ObservationSet {
  std::vector<FeatureObservation> obs;
  ParamVector truth;
  TerrainGrid estimator_grid;  // truth heights plus node noise
};

/// Exact projections of the scenario points plus noise drawn from
/// `noise_seed`: N(0, sigma_l^2) on the x and y of q2 and N(0, sigma_h^2)
/// on every DTM node.
ObservationSet generate_observations(const Scenario& s, std::uint64_t noise_seed);

/// Noiseless observations on the true terrain.
std::vector<FeatureObservation> clean_observations(const Scenario& s);

enum class Perturbation {
  Fixed,     // |dp| = position offset in a uniform direction, each angle +-angle offset
  Gaussian,  // per-axis std offset/sqrt(3) on positions, angle offset on angles
};

struct MonteCarloOptions {
  int trials = 150;
  std::uint64_t master_seed = 1;
  double init_position_offset = 50.0;  // p1, m
  double init_motion_offset = 50.0;    // p12, m
  double init_angle_offset_deg = 2.0;
  Perturbation perturbation = Perturbation::Fixed;
  // Run the initial-error gate on every trial. Gate-rejected trials are
  // left out of the empirical statistics, like rejected measurements are
  // left out of a navigation filter.
  bool gate = true;
  // Ground error model of the analytic covariance the trials are compared
  // against (and the gate is built from).
  GroundErrorModel analytic_model = GroundErrorModel::PointIndependent;
  SolverOptions solver;
  Exec exec = Exec::Parallel;  // over trials

  bool operator==(const MonteCarloOptions&) const = default;
};

/// Covariance of the initial-guess perturbation.
Mat12 perturbation_covariance(const MonteCarloOptions& opts);

/// Draws an initial guess around `truth`.
ParamVector perturb_guess(const ParamVector& truth, const MonteCarloOptions& opts, std::uint64_t seed);

struct TrialRecord {
  int index = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  bool degenerate = false;
  bool rejected = false;
  std::optional<ErrorCode> failure;
  int iterations = 0;
  int lm_iterations = 0;
  int anchor_passes = 0;
  int cost_steps = 0;
  int cost_decreases = 0;
  double condition_number = 0.0;
  double final_cost = 0.0;
  double gate_statistic = 0.0;
  Vec12 error = Vec12::Constant(std::numeric_limits<double>::quiet_NaN());  // theta_hat - truth
  Vec6 pose2_error = Vec6::Constant(std::numeric_limits<double>::quiet_NaN());
};

struct AnalyticCovariance {
  Mat12 sigma_theta = Mat12::Zero();
  Mat6 sigma_c2 = Mat6::Zero();
  double condition_number = 0.0;
  bool valid = false;  // false when the configuration is degenerate
};

/// Covariance of the gate innovation theta_hat - theta0: the spread of the
/// initial guess plus the estimate's own covariance.
Mat12 gate_covariance(const MonteCarloOptions& opts, const AnalyticCovariance& analytic);

/// One solve per trial; never throws for per-trial failures. The first
/// overload derives the gate covariance itself when opts.gate is set.
TrialRecord run_trial(const Scenario& s, const MonteCarloOptions& opts, int index);
TrialRecord run_trial(const Scenario& s, const MonteCarloOptions& opts, int index,
                      const std::optional<Mat12>& gate_cov);

/// All trials of one scenario. Serial and parallel runs produce identical
/// records.
std::vector<TrialRecord> run_trials(const Scenario& s, const MonteCarloOptions& opts);

/// Covariance module evaluated at the truth with noiseless data.
AnalyticCovariance analytic_at_truth(const Scenario& s,
                                     GroundErrorModel model = GroundErrorModel::PointIndependent);

struct MonteCarloResult {
  std::vector<TrialRecord> trials;
  AnalyticCovariance analytic;
  Mat12 empirical_theta = Mat12::Zero();
  Mat6 empirical_c2 = Mat6::Zero();
  Vec12 mean_error = Vec12::Zero();
  int converged = 0;
  int accepted = 0;  // converged and not gate-rejected: the trials behind the empirical statistics
  double convergence_rate = 0.0;
  double degenerate_rate = 0.0;
  double rejection_rate = 0.0;
  double mean_condition = 0.0;  // over all trials with a finite value

  /// Empirical and analytic stds: 12 parameters then 6 second-pose entries.
  Eigen::Matrix<double, 18, 1> empirical_std() const;
  Eigen::Matrix<double, 18, 1> analytic_std() const;
  /// max |empirical/analytic - 1| over the 18 stds.
  double max_relative_deviation() const;
  /// sqrt(trace) of the empirical second-pose position covariance.
  double position_std() const;
  /// sqrt(trace) of the empirical ego-motion rotation covariance.
  double rotation_std() const;
};

/// Throws InvalidArgument for trials < 2 and AllTrialsDiverged when fewer
/// than two trials are accepted.
MonteCarloResult monte_carlo(const Scenario& s, const MonteCarloOptions& opts);

/// Statistics from already-run trials.
MonteCarloResult summarize(std::vector<TrialRecord> trials, const AnalyticCovariance& analytic);

enum class SweepParameter { NFeatures, Resolution, GridSpacing, TerrainAmplitude, Baseline, Fov };

std::string to_string(SweepParameter p);
/// Throws InvalidArgument for unknown names.
SweepParameter sweep_parameter_from_string(const std::string& name);

/// Copy of `base` with the swept parameter set to `value`. A field of view
/// also caps the rotation at fov/6 and the baseline at half the nadir
/// footprint radius, so the two views keep overlapping at narrow angles;
/// neither cap binds at the nominal 60 degrees.
ScenarioParams with_value(const ScenarioParams& base, SweepParameter p, double value);

struct SweepPoint {
  double value = 0.0;
  std::optional<MonteCarloResult> result;
  std::string error;  // set when the value could not be evaluated
};

struct SweepResult {
  SweepParameter parameter = SweepParameter::NFeatures;
  std::vector<double> values;
  std::vector<SweepPoint> points;
};

/// Rebuilds the scenario for every value and runs the Monte-Carlo. Errors
/// are recorded per value and the sweep continues.
SweepResult sweep(const ScenarioParams& base, SweepParameter p, const std::vector<double>& values,
                  const MonteCarloOptions& opts);

struct FovPoint {
  double fov_deg = 0.0;
  int trials = 0;
  double convergence_rate = 0.0;
  double degenerate_rate = 0.0;
  double rejection_rate = 0.0;
  double mean_condition = 0.0;      // solver-reported, over trials
  double analytic_condition = 0.0;  // J_theta at truth
  std::string error;
};

std::vector<FovPoint> fov_study(const ScenarioParams& base, const std::vector<double>& fov_values_deg,
                                const MonteCarloOptions& opts);

/// Pose-2 error (position, wrapped Euler angles) of an estimate.
Vec6 pose2_error(const ParamVector& estimate, const ParamVector& truth);

}  // namespace cdtm
