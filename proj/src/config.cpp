#include "cdtm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>
#include <utility>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cdtm/error.hpp"
#include "cdtm/format.hpp"
#include "cdtm/report.hpp"

namespace cdtm {

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::Config, where + ": " + what);
}

template <typename E>
using EnumTable = std::vector<std::pair<const char*, E>>;

const EnumTable<RobustMode> kRobust = {{"off", RobustMode::Off}, {"huber", RobustMode::Huber}};
const EnumTable<AnchorMode> kAnchor = {
    {"once", AnchorMode::Once}, {"per_pass", AnchorMode::PerPass}, {"per_iteration", AnchorMode::PerIteration}};
const EnumTable<SolverScheme> kScheme = {{"joint", SolverScheme::Joint}, {"alternating", SolverScheme::Alternating}};
const EnumTable<Perturbation> kPerturbation = {{"fixed", Perturbation::Fixed}, {"gaussian", Perturbation::Gaussian}};
const EnumTable<GroundErrorModel> kGroundModel = {{"point", GroundErrorModel::PointIndependent},
                                                  {"node", GroundErrorModel::NodeInterpolated}};
const EnumTable<Exec> kExec = {{"serial", Exec::Serial}, {"parallel", Exec::Parallel}};
const EnumTable<SweepParameter> kSweep = {{"n_features", SweepParameter::NFeatures},
                                          {"resolution", SweepParameter::Resolution},
                                          {"grid_spacing", SweepParameter::GridSpacing},
                                          {"terrain_amplitude", SweepParameter::TerrainAmplitude},
                                          {"baseline", SweepParameter::Baseline},
                                          {"fov", SweepParameter::Fov}};

double to_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    bad(where, "expected a finite number, got '" + s + "'");
  }
  return v;
}

template <typename I>
I to_integer(const std::string& s, const std::string& where) {
  I v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) bad(where, "expected an integer, got '" + s + "'");
  return v;
}

// Typed conversions between a member and its text form.
template <typename T>
struct Codec;

template <>
struct Codec<double> {
  static std::string put(double v) { return fmt_double(v); }
  static double get(const std::string& s, const std::string& w) { return to_double(s, w); }
};
template <>
struct Codec<int> {
  static std::string put(int v) { return std::to_string(v); }
  static int get(const std::string& s, const std::string& w) { return to_integer<int>(s, w); }
};
template <>
struct Codec<std::uint64_t> {
  static std::string put(std::uint64_t v) { return std::to_string(v); }
  static std::uint64_t get(const std::string& s, const std::string& w) { return to_integer<std::uint64_t>(s, w); }
};
template <>
struct Codec<bool> {
  static std::string put(bool v) { return v ? "true" : "false"; }
  static bool get(const std::string& s, const std::string& w) {
    if (s == "true") return true;
    if (s == "false") return false;
    bad(w, "expected true or false, got '" + s + "'");
  }
};
template <>
struct Codec<std::string> {
  static std::string put(const std::string& v) { return v; }
  static std::string get(const std::string& s, const std::string& w) {
    if (s.find_first_of("\r\n") != std::string::npos) bad(w, "value spans lines");
    return s;
  }
};
template <>
struct Codec<std::vector<double>> {
  static std::string put(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt_double(v[i]);
    return out;
  }
  static std::vector<double> get(const std::string& s, const std::string& w) {
    std::vector<double> out;
    if (boost::algorithm::trim_copy(s).empty()) return out;
    std::vector<std::string> parts;
    boost::algorithm::split(parts, s, boost::algorithm::is_any_of(","));
    for (auto& p : parts) out.push_back(to_double(boost::algorithm::trim_copy(p), w));
    return out;
  }
};
template <>
struct Codec<std::optional<double>> {
  static std::string put(const std::optional<double>& v) { return v ? fmt_double(*v) : "auto"; }
  static std::optional<double> get(const std::string& s, const std::string& w) {
    if (s == "auto") return std::nullopt;
    return to_double(s, w);
  }
};

template <typename E>
std::string enum_put(const EnumTable<E>& table, E v) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  throw Error(ErrorCode::Config, "unnamed enumerator");
}

template <typename E>
E enum_get(const EnumTable<E>& table, const std::string& s, const std::string& where) {
  std::string names;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    names += std::string(names.empty() ? "" : ", ") + name;
  }
  bad(where, "expected one of " + names + ", got '" + s + "'");
}

enum class Check { None, Positive, NonNegative, Count };

template <typename T>
void check(const T& v, Check c, const std::string& where) {
  if constexpr (std::is_arithmetic_v<T> && !std::is_same_v<T, bool>) {
    if (c == Check::Positive && !(v > 0)) bad(where, "must be positive");
    if (c == Check::NonNegative && !(v >= 0)) bad(where, "must be non-negative");
    if (c == Check::Count && !(v >= 1)) bad(where, "must be at least 1");
  } else if constexpr (std::is_same_v<T, std::optional<double>>) {
    if (v && c == Check::Positive && !(*v > 0)) bad(where, "must be positive");
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> put;
  std::function<void(RunConfig&, const std::string&, const std::string&)> get;
};

template <typename T, typename Access>
Field field(std::string section, std::string key, Access access, Check c = Check::None) {
  return {std::move(section), std::move(key),
          [access](const RunConfig& cfg) { return Codec<T>::put(access(const_cast<RunConfig&>(cfg))); },
          [access, c](RunConfig& cfg, const std::string& text, const std::string& where) {
            T v = Codec<T>::get(text, where);
            check(v, c, where);
            access(cfg) = std::move(v);
          }};
}

template <typename E, typename Access>
Field enum_field(std::string section, std::string key, const EnumTable<E>& table, Access access) {
  return {std::move(section), std::move(key),
          [access, &table](const RunConfig& cfg) { return enum_put(table, access(const_cast<RunConfig&>(cfg))); },
          [access, &table](RunConfig& cfg, const std::string& text, const std::string& where) {
            access(cfg) = enum_get(table, text, where);
          }};
}

#define CDTM_AT(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field<double>("scenario", "extent", CDTM_AT(scenario.extent), Check::Positive),
      field<double>("scenario", "grid_spacing", CDTM_AT(scenario.grid_spacing), Check::Positive),
      field<double>("scenario", "elevation_range", CDTM_AT(scenario.elevation_range), Check::NonNegative),
      field<double>("scenario", "roughness", CDTM_AT(scenario.roughness), Check::Positive),
      field<double>("scenario", "altitude", CDTM_AT(scenario.altitude), Check::Positive),
      field<double>("scenario", "baseline", CDTM_AT(scenario.baseline), Check::NonNegative),
      field<double>("scenario", "rotation_deg", CDTM_AT(scenario.rotation_deg), Check::NonNegative),
      field<double>("scenario", "tilt_deg", CDTM_AT(scenario.tilt_deg), Check::NonNegative),
      field<double>("scenario", "centre_jitter", CDTM_AT(scenario.centre_jitter), Check::NonNegative),
      field<int>("scenario", "n_features", CDTM_AT(scenario.n_features), Check::Count),
      field<int>("scenario", "resolution", CDTM_AT(scenario.resolution), Check::Count),
      field<double>("scenario", "fov_deg", CDTM_AT(scenario.fov_deg), Check::Positive),
      field<double>("scenario", "pixel_fraction", CDTM_AT(scenario.pixel_fraction), Check::NonNegative),
      field<double>("scenario", "noise_scale", CDTM_AT(scenario.noise_scale), Check::NonNegative),
      field<double>("scenario", "height_noise_scale", CDTM_AT(scenario.height_noise_scale), Check::NonNegative),
      field<double>("scenario", "outlier_fraction", CDTM_AT(scenario.outlier_fraction), Check::NonNegative),
      field<double>("scenario", "outlier_depth_min", CDTM_AT(scenario.outlier_depth_min), Check::NonNegative),
      field<double>("scenario", "outlier_depth_max", CDTM_AT(scenario.outlier_depth_max), Check::NonNegative),
      field<std::uint64_t>("scenario", "seed", CDTM_AT(scenario.seed)),
      field<std::uint64_t>("scenario", "terrain_seed", CDTM_AT(scenario.terrain_seed)),

      field<int>("solver", "max_iters", CDTM_AT(montecarlo.solver.max_iters), Check::Count),
      field<int>("solver", "gn_fail_iters", CDTM_AT(montecarlo.solver.gn_fail_iters), Check::Count),
      field<double>("solver", "step_tol", CDTM_AT(montecarlo.solver.step_tol), Check::Positive),
      field<double>("solver", "residual_tol", CDTM_AT(montecarlo.solver.residual_tol), Check::Positive),
      field<double>("solver", "cost_rtol", CDTM_AT(montecarlo.solver.cost_rtol), Check::NonNegative),
      field<double>("solver", "lm_lambda0", CDTM_AT(montecarlo.solver.lm_lambda0), Check::Positive),
      field<double>("solver", "lm_scale", CDTM_AT(montecarlo.solver.lm_scale), Check::Positive),
      field<double>("solver", "lm_lambda_max", CDTM_AT(montecarlo.solver.lm_lambda_max), Check::Positive),
      enum_field("solver", "robust", kRobust, CDTM_AT(montecarlo.solver.robust)),
      field<std::optional<double>>("solver", "huber_delta", CDTM_AT(montecarlo.solver.huber_delta), Check::Positive),
      field<double>("solver", "cond_threshold", CDTM_AT(montecarlo.solver.cond_threshold), Check::Positive),
      field<double>("solver", "angle_scale", CDTM_AT(montecarlo.solver.angle_scale), Check::Positive),
      enum_field("solver", "anchor_mode", kAnchor, CDTM_AT(montecarlo.solver.anchor_mode)),
      field<int>("solver", "max_anchor_passes", CDTM_AT(montecarlo.solver.max_anchor_passes), Check::Count),
      field<double>("solver", "anchor_tol", CDTM_AT(montecarlo.solver.anchor_tol), Check::Positive),
      enum_field("solver", "scheme", kScheme, CDTM_AT(montecarlo.solver.scheme)),
      enum_field("solver", "exec", kExec, CDTM_AT(montecarlo.solver.exec)),

      field<int>("montecarlo", "trials", CDTM_AT(montecarlo.trials), Check::Count),
      field<std::uint64_t>("montecarlo", "master_seed", CDTM_AT(montecarlo.master_seed)),
      field<double>("montecarlo", "init_position_offset", CDTM_AT(montecarlo.init_position_offset),
                    Check::NonNegative),
      field<double>("montecarlo", "init_motion_offset", CDTM_AT(montecarlo.init_motion_offset), Check::NonNegative),
      field<double>("montecarlo", "init_angle_offset_deg", CDTM_AT(montecarlo.init_angle_offset_deg),
                    Check::NonNegative),
      enum_field("montecarlo", "perturbation", kPerturbation, CDTM_AT(montecarlo.perturbation)),
      field<bool>("montecarlo", "gate", CDTM_AT(montecarlo.gate)),
      enum_field("montecarlo", "analytic_model", kGroundModel, CDTM_AT(montecarlo.analytic_model)),
      enum_field("montecarlo", "exec", kExec, CDTM_AT(montecarlo.exec)),

      field<int>("terrain", "rows", CDTM_AT(terrain.rows), Check::Count),
      field<int>("terrain", "cols", CDTM_AT(terrain.cols), Check::Count),
      field<double>("terrain", "spacing", CDTM_AT(terrain.spacing), Check::Positive),
      field<double>("terrain", "range", CDTM_AT(terrain.range), Check::NonNegative),
      field<std::uint64_t>("terrain", "seed", CDTM_AT(terrain.seed)),
      field<double>("terrain", "roughness", CDTM_AT(terrain.roughness), Check::Positive),
      field<int>("terrain", "clones_x", CDTM_AT(terrain.clones_x), Check::Count),
      field<int>("terrain", "clones_y", CDTM_AT(terrain.clones_y), Check::Count),
      field<double>("terrain", "amplitude_scale", CDTM_AT(terrain.amplitude_scale), Check::Positive),

      field<std::string>("estimate", "observations", CDTM_AT(estimate.observations)),
      field<std::string>("estimate", "terrain", CDTM_AT(estimate.terrain)),
      field<std::string>("estimate", "initial", CDTM_AT(estimate.initial)),
      field<std::string>("estimate", "prior", CDTM_AT(estimate.prior)),
      field<double>("estimate", "sigma_l", CDTM_AT(estimate.sigma_l), Check::NonNegative),
      field<double>("estimate", "sigma_h", CDTM_AT(estimate.sigma_h), Check::NonNegative),

      enum_field("sweep", "parameter", kSweep, CDTM_AT(sweep.parameter)),
      field<std::vector<double>>("sweep", "values", CDTM_AT(sweep.values)),

      field<std::vector<double>>("fov", "values", CDTM_AT(fov_values)),

      field<std::string>("output", "dir", CDTM_AT(output_dir)),
      field<bool>("output", "plots", CDTM_AT(plots)),
  };
  return all;
}

#undef CDTM_AT

const Field& find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  bool known_section = false;
  for (const Field& f : fields()) known_section |= f.section == section;
  if (!known_section) throw Error(ErrorCode::Config, "unknown section [" + section + "]");
  throw Error(ErrorCode::Config, "unknown key '" + key + "' in [" + section + "]");
}

}  // namespace

void set_config_value(RunConfig& config, const std::string& section, const std::string& key,
                      const std::string& value) {
  find_field(section, key).get(config, boost::algorithm::trim_copy(value), section + "." + key);
}

RunConfig parse_config(const std::string& text) {
  // The INI reader only knows ';' comments; accept '#' as well.
  std::istringstream raw(text);
  std::ostringstream cleaned;
  std::string line;
  while (std::getline(raw, line)) {
    const std::string t = boost::algorithm::trim_left_copy(line);
    cleaned << (t.starts_with('#') ? std::string() : line) << '\n';
  }
  boost::property_tree::ptree tree;
  std::istringstream in(cleaned.str());
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::Config, std::string("config syntax: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      const bool empty_section =
          body.data().empty() && std::any_of(fields().begin(), fields().end(),
                                             [&](const Field& f) { return f.section == section; });
      if (empty_section) continue;
      throw Error(ErrorCode::Config, "key '" + section + "' outside any section");
    }
    for (const auto& [key, node] : body) set_config_value(config, section, key, node.data());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  try {
    return parse_config(load_text(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io) throw Error(ErrorCode::Config, e.what());
    throw;
  }
}

std::string format_config(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.put(config) << '\n';
  }
  return out.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

}  // namespace cdtm
