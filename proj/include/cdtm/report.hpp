#pragma once

// Result files: versioned CSV tables, SVG line plots, matrix and parameter
// text, and the observation interchange CSV.
//
// Every CSV starts with a "# <schema> v<version>" comment line followed by a
// header row. Numbers are written as the shortest decimal that reads back to
// the same double, so rerunning a command reproduces files byte for byte.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cdtm/constraint.hpp"
#include "cdtm/sim.hpp"

namespace cdtm {

inline constexpr const char* kTrialsSchema = "# cdtm-trials v1";
inline constexpr const char* kSummarySchema = "# cdtm-summary v1";
inline constexpr const char* kFovSchema = "# cdtm-fov v1";

/// Names of the twelve parameters followed by the six second-pose entries.
const std::array<std::string, 18>& std_names();

/// One row per trial.
void write_trials_csv(std::ostream& out, const std::vector<TrialRecord>& trials);
/// Same columns prefixed by the swept parameter and value.
void write_sweep_trials_csv(std::ostream& out, const SweepResult& sweep);

/// One row per swept value (a single Monte-Carlo run is a one-row table
/// with an empty parameter name).
void write_summary_csv(std::ostream& out, const SweepResult& sweep);
void write_summary_csv(std::ostream& out, const MonteCarloResult& result);

void write_fov_csv(std::ostream& out, const std::vector<FovPoint>& points);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line plot. Non-finite points are skipped.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);

/// Row-major decimal text: one matrix row per line, entries separated by
/// single spaces.
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);
/// Throws Io on ragged rows or unparsable entries.
Eigen::MatrixXd read_matrix(std::istream& in);

/// Twelve "name = value" lines in flattened order.
void write_theta(std::ostream& out, const ParamVector& theta);
/// Throws Io when a parameter is missing, repeated, unknown or unparsable.
ParamVector read_theta(std::istream& in);

/// Header `feature_id,q1x,q1y,q2x,q2y`, coordinates at unit focal length.
void write_observations_csv(std::ostream& out, const std::vector<FeatureObservation>& obs);
/// Throws Io on a missing or different header and on malformed rows.
std::vector<FeatureObservation> read_observations_csv(std::istream& in);

/// File wrappers; throw Io when the file cannot be opened.
void save_text(const std::string& path, const std::string& text);
std::string load_text(const std::string& path);

}  // namespace cdtm
