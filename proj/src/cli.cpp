#include "cdtm/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <list>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "cdtm/config.hpp"
#include "cdtm/covariance.hpp"
#include "cdtm/dtm.hpp"
#include "cdtm/dtm_io.hpp"
#include "cdtm/error.hpp"
#include "cdtm/format.hpp"
#include "cdtm/report.hpp"
#include "cdtm/sim.hpp"
#include "cdtm/solver.hpp"

namespace cdtm {

namespace {

namespace fs = std::filesystem;

// Raised for problems with the invocation itself: bad flags, missing or
// unreadable input files, invalid configuration.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Command-line flags that write straight into a config key.
class FlagBindings {
 public:
  void bind(CLI::App* app, const std::string& flag, const std::string& section, const std::string& key,
            const std::string& help) {
    values_.emplace_back();
    CLI::Option* opt = app->add_option(flag, values_.back(), help);
    bindings_.push_back({opt, &values_.back(), section, key});
  }

  void apply(RunConfig& cfg) const {
    for (const Binding& b : bindings_) {
      if (b.option->count() > 0) set_config_value(cfg, b.section, b.key, *b.value);
    }
  }

 private:
  struct Binding {
    CLI::Option* option;
    const std::string* value;
    std::string section;
    std::string key;
  };
  std::list<std::string> values_;
  std::vector<Binding> bindings_;
};

fs::path out_path(const RunConfig& cfg, const std::string& name) { return fs::path(cfg.output_dir) / name; }

void ensure_output_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + cfg.output_dir + ": " + ec.message());
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ostringstream s;
  writer(s);
  save_text(path.string(), s.str());
}

std::string require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("no " + what + " file given");
  if (!fs::is_regular_file(path)) throw UsageError(what + " file not found: " + path);
  return path;
}

Scenario scenario_from(const RunConfig& cfg) { return build_scenario(cfg.scenario); }

// --- gen-terrain -----------------------------------------------------------

int cmd_gen_terrain(const RunConfig& cfg, const std::string& output, std::ostream& out) {
  const TerrainConfig& t = cfg.terrain;
  TerrainGrid grid = fractal_terrain(t.rows, t.cols, t.spacing, t.range, t.seed, t.roughness);
  if (t.clones_x > 1 || t.clones_y > 1 || t.amplitude_scale != 1.0) {
    grid = synth_terrain(grid, t.clones_x, t.clones_y, t.amplitude_scale);
  }
  fs::path path = output.empty() ? out_path(cfg, "terrain.asc") : fs::path(output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_asc(path.string(), grid);
  out << "wrote " << path.string() << '\n'
      << "nodes " << grid.rows() << " x " << grid.cols() << '\n'
      << "spacing " << fmt_double(grid.spacing()) << " m\n"
      << "elevation range " << fmt_double(grid.max_height() - grid.min_height()) << " m\n";
  return static_cast<int>(ExitCode::Ok);
}

// --- gen-scenario ----------------------------------------------------------

int cmd_gen_scenario(const RunConfig& cfg, bool noiseless, std::ostream& out) {
  ensure_output_dir(cfg);
  const Scenario s = scenario_from(cfg);
  const std::uint64_t trial_seed = derive_seed(cfg.montecarlo.master_seed, 0);
  std::vector<FeatureObservation> obs;
  TerrainGrid estimator_grid = s.grid;
  if (noiseless) {
    obs = clean_observations(s);
  } else {
    ObservationSet data = generate_observations(s, derive_seed(trial_seed, 0));
    obs = std::move(data.obs);
    estimator_grid = std::move(data.estimator_grid);
  }
  const ParamVector theta0 = perturb_guess(s.truth(), cfg.montecarlo, derive_seed(trial_seed, 1));
  save_asc(out_path(cfg, "terrain_truth.asc").string(), s.grid);
  save_asc(out_path(cfg, "terrain.asc").string(), estimator_grid);
  write_file(out_path(cfg, "observations.csv"), [&](std::ostream& o) { write_observations_csv(o, obs); });
  write_file(out_path(cfg, "truth.txt"), [&](std::ostream& o) { write_theta(o, s.truth()); });
  write_file(out_path(cfg, "initial.txt"), [&](std::ostream& o) { write_theta(o, theta0); });
  const AnalyticCovariance analytic = analytic_at_truth(s, cfg.montecarlo.analytic_model);
  write_file(out_path(cfg, "prior.txt"),
             [&](std::ostream& o) { write_matrix(o, gate_covariance(cfg.montecarlo, analytic)); });
  save_text(out_path(cfg, "scenario.cfg").string(), format_config(cfg));
  out << "features " << s.n_features() << '\n'
      << "sigma_l " << fmt_double(noiseless ? 0.0 : s.noise.sigma_l) << '\n'
      << "sigma_h " << fmt_double(noiseless ? 0.0 : s.noise.sigma_h) << " m\n"
      << "wrote " << cfg.output_dir << '\n';
  return static_cast<int>(ExitCode::Ok);
}

// --- estimate --------------------------------------------------------------

int cmd_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const EstimateConfig& e = cfg.estimate;
  const std::string obs_path = require_input(e.observations, "observations");
  const std::string terrain_path = require_input(e.terrain, "terrain");
  const std::string initial_path = require_input(e.initial, "initial-guess");

  std::vector<FeatureObservation> obs;
  TerrainGrid grid = [&] {
    try {
      std::istringstream o(load_text(obs_path));
      obs = read_observations_csv(o);
      return load_asc(terrain_path);
    } catch (const Error& ex) {
      throw UsageError(ex.what());
    }
  }();
  ParamVector theta0;
  std::optional<Mat12> prior;
  try {
    std::istringstream t(load_text(initial_path));
    theta0 = read_theta(t);
    if (!e.prior.empty()) {
      std::istringstream p(load_text(require_input(e.prior, "prior")));
      const Eigen::MatrixXd m = read_matrix(p);
      if (m.rows() != 12 || m.cols() != 12) throw UsageError("prior must be a 12 x 12 matrix");
      prior = Mat12(m);
    }
  } catch (const Error& ex) {
    throw UsageError(ex.what());
  }

  NoiseModel noise;
  noise.sigma_l = e.sigma_l > 0.0
                      ? e.sigma_l
                      : image_noise_sigma(cfg.scenario.resolution, cfg.scenario.fov_deg, cfg.scenario.pixel_fraction);
  noise.sigma_h = e.sigma_h > 0.0 ? e.sigma_h : height_noise_sigma(grid.spacing());

  SolverOptions so = cfg.montecarlo.solver;
  so.prior_cov = prior;
  SolveReport r;
  try {
    r = solve(theta0, obs, grid, so);
  } catch (const Error& ex) {
    err << "error: " << to_string(ex.code()) << ": " << ex.what() << '\n';
    out << "status failed\nreason " << to_string(ex.code()) << '\n';
    return static_cast<int>(ex.code() == ErrorCode::TooFewFeatures ? ExitCode::Usage : ExitCode::NotConverged);
  }

  ensure_output_dir(cfg);
  std::optional<CovarianceReport> cov;
  std::string cov_error;
  try {
    cov = analyze(r.theta_hat, obs, r.anchors, noise, grid, cfg.montecarlo.analytic_model);
  } catch (const Error& ex) {
    cov_error = to_string(ex.code());
    if (ex.code() == ErrorCode::IllConditioned) r.degenerate = true;
  }

  write_file(out_path(cfg, "theta.txt"), [&](std::ostream& o) { write_theta(o, r.theta_hat); });
  if (cov) {
    write_file(out_path(cfg, "sigma_theta.txt"), [&](std::ostream& o) { write_matrix(o, cov->sigma_theta); });
    write_file(out_path(cfg, "sigma_c2.txt"), [&](std::ostream& o) { write_matrix(o, cov->sigma_c2); });
  }
  if (!r.outlier_weights.empty()) {
    write_file(out_path(cfg, "weights.txt"), [&](std::ostream& o) {
      o << "feature_id,weight\n";
      for (std::size_t i = 0; i < r.outlier_weights.size(); ++i) o << i << ',' << fmt_double(r.outlier_weights[i]) << '\n';
    });
  }

  ExitCode code = ExitCode::Ok;
  std::string status = "ok";
  if (r.degenerate) {
    code = ExitCode::Degenerate;
    status = "degenerate";
  } else if (r.rejected) {
    code = ExitCode::Rejected;
    status = "rejected";
  } else if (!r.converged) {
    code = ExitCode::NotConverged;
    status = "not_converged";
  }
  std::ostringstream diag;
  diag << "status = " << status << '\n'
       << "converged = " << (r.converged ? "true" : "false") << '\n'
       << "degenerate = " << (r.degenerate ? "true" : "false") << '\n'
       << "rejected = " << (r.rejected ? "true" : "false") << '\n'
       << "failure = " << (r.failure ? to_string(*r.failure) : "none") << '\n'
       << "iterations = " << r.iterations << '\n'
       << "lm_iterations = " << r.lm_iterations << '\n'
       << "final_cost = " << fmt_double(r.final_cost) << '\n'
       << "condition_number = " << fmt_double(r.condition_number) << '\n'
       << "covariance = " << (cov ? "ok" : cov_error) << '\n'
       << "sigma_l = " << fmt_double(noise.sigma_l) << '\n'
       << "sigma_h = " << fmt_double(noise.sigma_h) << '\n';
  save_text(out_path(cfg, "diagnostics.txt").string(), diag.str());
  out << diag.str();
  return static_cast<int>(code);
}

// --- montecarlo / sweep / fov ----------------------------------------------

std::string summary_line(const MonteCarloResult& r) {
  std::ostringstream o;
  o << "trials " << r.trials.size() << ", converged " << r.converged << ", accepted " << r.accepted
    << ", position std " << fmt_double(r.position_std()) << " m, rotation std " << fmt_double(r.rotation_std())
    << " rad, max |empirical/analytic - 1| over 18 stds " << fmt_double(r.max_relative_deviation());
  return o.str();
}

int cmd_montecarlo(const RunConfig& cfg, std::ostream& out) {
  ensure_output_dir(cfg);
  save_text(out_path(cfg, "run.cfg").string(), format_config(cfg));
  const Scenario s = scenario_from(cfg);
  MonteCarloResult r;
  try {
    r = monte_carlo(s, cfg.montecarlo);
  } catch (const Error& ex) {
    if (ex.code() != ErrorCode::AllTrialsDiverged) throw;
    out << "no usable trials: " << ex.what() << '\n';
    return static_cast<int>(ExitCode::NotConverged);
  }
  write_file(out_path(cfg, "trials.csv"), [&](std::ostream& o) { write_trials_csv(o, r.trials); });
  write_file(out_path(cfg, "summary.csv"), [&](std::ostream& o) { write_summary_csv(o, r); });
  if (cfg.plots) {
    PlotSeries ratio{"empirical / analytic", {}, {}}, lo{"0.8", {}, {}}, hi{"1.2", {}, {}};
    const auto e = r.empirical_std(), a = r.analytic_std();
    for (int k = 0; k < 18; ++k) {
      ratio.x.push_back(k + 1);
      ratio.y.push_back(e(k) / a(k));
      lo.x.push_back(k + 1);
      lo.y.push_back(0.8);
      hi.x.push_back(k + 1);
      hi.y.push_back(1.2);
    }
    save_text(out_path(cfg, "montecarlo.svg").string(),
              svg_line_plot("Empirical vs analytic std", "parameter (p1, a1, p12, a12, p2, a2)", "std ratio",
                            {ratio, lo, hi}));
  }
  out << summary_line(r) << '\n';
  const auto e = r.empirical_std(), a = r.analytic_std();
  for (int k = 0; k < 18; ++k) {
    out << "  " << std_names()[std::size_t(k)] << " empirical " << fmt_double(e(k)) << " analytic "
        << fmt_double(a(k)) << '\n';
  }
  return static_cast<int>(ExitCode::Ok);
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  if (cfg.sweep.values.empty()) throw UsageError("sweep needs at least one value");
  ensure_output_dir(cfg);
  save_text(out_path(cfg, "run.cfg").string(), format_config(cfg));
  const SweepResult sw = sweep(cfg.scenario, cfg.sweep.parameter, cfg.sweep.values, cfg.montecarlo);
  write_file(out_path(cfg, "sweep.csv"), [&](std::ostream& o) { write_summary_csv(o, sw); });
  write_file(out_path(cfg, "sweep_trials.csv"), [&](std::ostream& o) { write_sweep_trials_csv(o, sw); });

  PlotSeries pe{"empirical", {}, {}}, pa{"analytic", {}, {}}, re{"empirical", {}, {}}, ra{"analytic", {}, {}};
  int ok = 0;
  for (const SweepPoint& p : sw.points) {
    if (!p.result) {
      out << to_string(sw.parameter) << ' ' << fmt_double(p.value) << ": " << p.error << '\n';
      continue;
    }
    ++ok;
    const MonteCarloResult& r = *p.result;
    out << to_string(sw.parameter) << ' ' << fmt_double(p.value) << ": " << summary_line(r) << '\n';
    const auto a = r.analytic_std();
    pe.x.push_back(p.value);
    pe.y.push_back(r.position_std());
    pa.x.push_back(p.value);
    pa.y.push_back(std::sqrt(a.segment<3>(12).squaredNorm()));
    re.x.push_back(p.value);
    re.y.push_back(r.rotation_std());
    ra.x.push_back(p.value);
    ra.y.push_back(std::sqrt(a.segment<3>(9).squaredNorm()));
  }
  if (cfg.plots) {
    const std::string name = to_string(sw.parameter);
    save_text(out_path(cfg, "sweep_position.svg").string(),
              svg_line_plot("Second-pose position std", name, "std (m)", {pe, pa}));
    save_text(out_path(cfg, "sweep_rotation.svg").string(),
              svg_line_plot("Ego-motion rotation std", name, "std (rad)", {re, ra}));
  }
  return static_cast<int>(ok > 0 ? ExitCode::Ok : ExitCode::Failure);
}

int cmd_fov(const RunConfig& cfg, std::ostream& out) {
  if (cfg.fov_values.empty()) throw UsageError("fov study needs at least one value");
  ensure_output_dir(cfg);
  save_text(out_path(cfg, "run.cfg").string(), format_config(cfg));
  const std::vector<FovPoint> points = fov_study(cfg.scenario, cfg.fov_values, cfg.montecarlo);
  write_file(out_path(cfg, "fov.csv"), [&](std::ostream& o) { write_fov_csv(o, points); });
  PlotSeries conv{"convergence rate", {}, {}}, deg{"degenerate rate", {}, {}};
  int ok = 0;
  for (const FovPoint& p : points) {
    out << "fov " << fmt_double(p.fov_deg) << ": ";
    if (!p.error.empty()) {
      out << p.error << '\n';
      continue;
    }
    ++ok;
    out << "convergence " << fmt_double(p.convergence_rate) << ", degenerate " << fmt_double(p.degenerate_rate)
        << ", mean condition " << fmt_double(p.mean_condition) << ", analytic condition "
        << fmt_double(p.analytic_condition) << '\n';
    conv.x.push_back(p.fov_deg);
    conv.y.push_back(p.convergence_rate);
    deg.x.push_back(p.fov_deg);
    deg.y.push_back(p.degenerate_rate);
  }
  if (cfg.plots) {
    save_text(out_path(cfg, "fov.svg").string(), svg_line_plot("Field of view", "FOV (deg)", "rate", {conv, deg}));
  }
  return static_cast<int>(ok > 0 ? ExitCode::Ok : ExitCode::Failure);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose and ego-motion from optical flow and a terrain map"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  app.add_option("--config", config_path, "Config file (sectioned key = value)");
  app.add_option("--set", sets, "Override one key: section.key=value (repeatable)");
  app.add_option("--out", out_dir, "Output directory (output.dir)");

  FlagBindings flags;

  CLI::App* gen_terrain = app.add_subcommand("gen-terrain", "Write a fractal terrain as an ESRI ASCII grid");
  std::string terrain_output;
  flags.bind(gen_terrain, "--rows", "terrain", "rows", "Node rows");
  flags.bind(gen_terrain, "--cols", "terrain", "cols", "Node columns");
  flags.bind(gen_terrain, "--spacing", "terrain", "spacing", "Grid spacing (m)");
  flags.bind(gen_terrain, "--range", "terrain", "range", "Elevation range max - min (m)");
  flags.bind(gen_terrain, "--seed", "terrain", "seed", "Random seed");
  flags.bind(gen_terrain, "--roughness", "terrain", "roughness", "Amplitude ratio per octave, in (0, 1)");
  flags.bind(gen_terrain, "--clones-x", "terrain", "clones_x", "Mirrored tiles along x");
  flags.bind(gen_terrain, "--clones-y", "terrain", "clones_y", "Mirrored tiles along y");
  flags.bind(gen_terrain, "--amplitude-scale", "terrain", "amplitude_scale", "Height scale about the mean");
  gen_terrain->add_option("-o,--output", terrain_output, "Output .asc (default <out>/terrain.asc)");

  CLI::App* gen_scenario = app.add_subcommand("gen-scenario", "Write a synthetic scenario for estimate");
  bool noiseless = false;
  flags.bind(gen_scenario, "--seed", "scenario", "seed", "Scenario seed");
  flags.bind(gen_scenario, "--noise-seed", "montecarlo", "master_seed", "Seed of the noise and initial guess");
  gen_scenario->add_flag("--noiseless", noiseless, "Exact observations on the true terrain");

  CLI::App* estimate = app.add_subcommand("estimate", "Estimate pose and ego-motion with covariance");
  flags.bind(estimate, "--observations", "estimate", "observations", "CSV feature_id,q1x,q1y,q2x,q2y");
  flags.bind(estimate, "--terrain", "estimate", "terrain", "Terrain .asc");
  flags.bind(estimate, "--initial", "estimate", "initial", "Initial guess (name = value lines)");
  flags.bind(estimate, "--prior", "estimate", "prior", "12 x 12 prior covariance enabling the gate");
  flags.bind(estimate, "--sigma-l", "estimate", "sigma_l", "Image noise std at unit focal length");
  flags.bind(estimate, "--sigma-h", "estimate", "sigma_h", "Terrain height std (m)");
  flags.bind(estimate, "--robust", "solver", "robust", "off or huber");

  CLI::App* montecarlo = app.add_subcommand("montecarlo", "Monte-Carlo validation of the covariance");
  flags.bind(montecarlo, "--trials", "montecarlo", "trials", "Number of trials");
  flags.bind(montecarlo, "--seed", "montecarlo", "master_seed", "Master seed");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Monte-Carlo over one scenario parameter");
  flags.bind(sweep_cmd, "--parameter", "sweep", "parameter", "n_features, resolution, grid_spacing, ...");
  flags.bind(sweep_cmd, "--values", "sweep", "values", "Comma-separated values");
  flags.bind(sweep_cmd, "--trials", "montecarlo", "trials", "Trials per value");
  flags.bind(sweep_cmd, "--seed", "montecarlo", "master_seed", "Master seed");

  CLI::App* fov = app.add_subcommand("fov", "Convergence and conditioning against field of view");
  flags.bind(fov, "--values", "fov", "values", "Comma-separated FOVs in degrees");
  flags.bind(fov, "--trials", "montecarlo", "trials", "Trials per value");
  flags.bind(fov, "--seed", "montecarlo", "master_seed", "Master seed");

  CLI::App* show = app.add_subcommand("show-config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::Usage);
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    RunConfig cfg;
    try {
      if (!config_path.empty()) {
        if (!fs::is_regular_file(config_path)) throw UsageError("config file not found: " + config_path);
        cfg = load_config(config_path);
      }
      for (const std::string& s : sets) {
        const auto eq = s.find('=');
        const auto dot = s.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
          throw UsageError("--set expects section.key=value, got '" + s + "'");
        }
        set_config_value(cfg, s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
      }
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      flags.apply(cfg);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }

    int code = 0;
    if (*gen_terrain) code = cmd_gen_terrain(cfg, terrain_output, out);
    if (*gen_scenario) code = cmd_gen_scenario(cfg, noiseless, out);
    if (*estimate) code = cmd_estimate(cfg, out, err);
    if (*montecarlo) code = cmd_montecarlo(cfg, out);
    if (*sweep_cmd) code = cmd_sweep(cfg, out);
    if (*fov) code = cmd_fov(cfg, out);
    if (*show) out << format_config(cfg);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    err << "elapsed " << elapsed.count() << " s\n";
    return code;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Usage);
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return static_cast<int>(e.code() == ErrorCode::InvalidArgument ? ExitCode::Usage : ExitCode::Failure);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Failure);
  }
}

}  // namespace cdtm
