#pragma once

// Run configuration shared by every command.
//
// The file format is sectioned `key = value` text:
//
//     [scenario]
//     grid_spacing = 30
//     [montecarlo]
//     trials = 150
//
// Every key has a default, so any subset may be given. Unknown sections or
// keys are errors. format_config writes every key with full precision, so
// parse_config(format_config(c)) == c.

#include <cstdint>
#include <string>
#include <vector>

#include "cdtm/sim.hpp"

namespace cdtm {

struct TerrainConfig {
  int rows = 101;
  int cols = 101;
  double spacing = 30.0;
  double range = 300.0;
  std::uint64_t seed = 7;
  double roughness = 0.55;
  int clones_x = 1;  // >1 tiles the generated cell by mirroring
  int clones_y = 1;
  double amplitude_scale = 1.0;

  bool operator==(const TerrainConfig&) const = default;
};

struct EstimateConfig {
  std::string observations;  // CSV feature_id,q1x,q1y,q2x,q2y
  std::string terrain;       // .asc
  std::string initial;       // parameter file, name = value
  std::string prior;         // optional 12x12 matrix enabling the gate
  double sigma_l = 0.0;      // 0: half a pixel of the scenario camera
  double sigma_h = 0.0;      // 0: 0.08 of the terrain grid spacing

  bool operator==(const EstimateConfig&) const = default;
};

struct SweepConfig {
  SweepParameter parameter = SweepParameter::NFeatures;
  std::vector<double> values = {10, 25, 50, 100, 150, 200, 300};

  bool operator==(const SweepConfig&) const = default;
};

struct RunConfig {
  ScenarioParams scenario;
  MonteCarloOptions montecarlo;  // includes the solver options
  TerrainConfig terrain;
  EstimateConfig estimate;
  SweepConfig sweep;
  std::vector<double> fov_values = {5, 8, 15, 30, 45, 60};
  std::string output_dir = ".";
  bool plots = true;

  bool operator==(const RunConfig&) const = default;
};

/// Throws Config on syntax errors, unknown sections or keys, repeated keys
/// and out-of-range values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

std::string format_config(const RunConfig& config);

/// Sets one key, e.g. ("solver", "max_iters", "80"). Same errors as
/// parse_config.
void set_config_value(RunConfig& config, const std::string& section, const std::string& key,
                      const std::string& value);

/// "section.key" for every known key, in file order.
std::vector<std::string> config_keys();

}  // namespace cdtm
