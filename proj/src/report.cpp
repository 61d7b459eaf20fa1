#include "cdtm/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include <boost/algorithm/string.hpp>

#include "cdtm/error.hpp"
#include "cdtm/format.hpp"

namespace cdtm {

namespace {

constexpr std::array<const char*, 12> kThetaNames = {"p1x",  "p1y",  "p1z",  "phi1",  "theta1",  "psi1",
                                                     "p12x", "p12y", "p12z", "phi12", "theta12", "psi12"};

double parse_double(const std::string& text, const std::string& where) {
  const std::string t = boost::algorithm::trim_copy(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorCode::Io, where + ": cannot parse number '" + t + "'");
  }
  return v;
}

std::string cell(double v) { return std::isfinite(v) ? fmt_double(v) : std::string("nan"); }

void write_stds(std::ostream& out, const Eigen::Matrix<double, 18, 1>& v) {
  for (int k = 0; k < 18; ++k) out << ',' << cell(v(k));
}

void summary_header(std::ostream& out) {
  out << kSummarySchema << '\n'
      << "parameter,value,trials,converged,accepted,convergence_rate,degenerate_rate,rejection_rate,mean_condition,"
         "analytic_condition,position_std,rotation_std,max_rel_dev";
  for (const auto& n : std_names()) out << ",emp_" << n;
  for (const auto& n : std_names()) out << ",ana_" << n;
  out << ",error\n";
}

void summary_row(std::ostream& out, const std::string& parameter, double value, const MonteCarloResult& r) {
  out << parameter << ',' << cell(value) << ',' << r.trials.size() << ',' << r.converged << ',' << r.accepted
      << ',' << cell(r.convergence_rate) << ',' << cell(r.degenerate_rate) << ',' << cell(r.rejection_rate) << ','
      << cell(r.mean_condition) << ',' << cell(r.analytic.condition_number) << ',' << cell(r.position_std()) << ','
      << cell(r.rotation_std()) << ',' << cell(r.max_relative_deviation());
  write_stds(out, r.empirical_std());
  write_stds(out, r.analytic_std());
  out << ",\n";
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Four significant digits keep tick labels short.
std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::vector<double> nice_ticks(double lo, double hi) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) ticks.push_back(t);
  return ticks;
}

}  // namespace

const std::array<std::string, 18>& std_names() {
  static const std::array<std::string, 18> names = {
      "p1x",  "p1y",  "p1z",  "phi1",  "theta1",  "psi1",  "p12x", "p12y", "p12z",
      "phi12", "theta12", "psi12", "p2x", "p2y", "p2z", "phi2", "theta2", "psi2"};
  return names;
}

namespace {

void trials_header(std::ostream& out, bool with_value) {
  out << kTrialsSchema << '\n' << (with_value ? "parameter,value," : "")
      << "trial,seed,converged,degenerate,rejected,failure,iterations,lm_iterations,anchor_passes,cost_steps,"
         "cost_decreases,condition_number,final_cost,gate_statistic";
  for (const auto& n : std_names()) out << ",err_" << n;
  out << '\n';
}

void trial_row(std::ostream& out, const TrialRecord& t) {
  out << t.index << ',' << t.seed << ',' << int(t.converged) << ',' << int(t.degenerate) << ','
      << int(t.rejected) << ',' << (t.failure ? to_string(*t.failure) : "") << ',' << t.iterations << ','
      << t.lm_iterations << ',' << t.anchor_passes << ',' << t.cost_steps << ',' << t.cost_decreases << ','
      << cell(t.condition_number) << ',' << cell(t.final_cost) << ',' << cell(t.gate_statistic);
  for (int k = 0; k < 12; ++k) out << ',' << cell(t.error(k));
  for (int k = 0; k < 6; ++k) out << ',' << cell(t.pose2_error(k));
  out << '\n';
}

}  // namespace

void write_trials_csv(std::ostream& out, const std::vector<TrialRecord>& trials) {
  trials_header(out, false);
  for (const TrialRecord& t : trials) trial_row(out, t);
}

void write_sweep_trials_csv(std::ostream& out, const SweepResult& sweep) {
  trials_header(out, true);
  const std::string name = to_string(sweep.parameter);
  for (const SweepPoint& p : sweep.points) {
    if (!p.result) continue;
    for (const TrialRecord& t : p.result->trials) {
      out << name << ',' << cell(p.value) << ',';
      trial_row(out, t);
    }
  }
}

void write_summary_csv(std::ostream& out, const SweepResult& sweep) {
  summary_header(out);
  const std::string name = to_string(sweep.parameter);
  for (const SweepPoint& p : sweep.points) {
    if (p.result) {
      summary_row(out, name, p.value, *p.result);
      continue;
    }
    out << name << ',' << cell(p.value);
    for (int k = 0; k < 11 + 36; ++k) out << ",nan";
    std::string msg = p.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << ',' << msg << '\n';
  }
}

void write_summary_csv(std::ostream& out, const MonteCarloResult& result) {
  summary_header(out);
  summary_row(out, "", std::numeric_limits<double>::quiet_NaN(), result);
}

void write_fov_csv(std::ostream& out, const std::vector<FovPoint>& points) {
  out << kFovSchema << '\n'
      << "fov_deg,trials,convergence_rate,degenerate_rate,mean_condition,analytic_condition,error\n";
  for (const FovPoint& p : points) {
    std::string msg = p.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    out << cell(p.fov_deg) << ',' << p.trials << ',' << cell(p.convergence_rate) << ',' << cell(p.degenerate_rate)
        << ',' << cell(p.mean_condition) << ',' << cell(p.analytic_condition) << ',' << msg << '\n';
  }
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
  constexpr double kW = 640, kH = 420, kL = 80, kR = 150, kT = 40, kB = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const PlotSeries& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x0 -= 0.5, x1 += 0.5;
  y0 = std::min(y0, 0.0);
  if (y1 <= y0) y1 = y0 + 1.0;
  y1 += 0.05 * (y1 - y0);

  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto sx = [&](double x) { return kL + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return kT + ph - (y - y0) / (y1 - y0) * ph; };

  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
    << "</text>\n"
    << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : nice_ticks(x0, x1)) {
    o << "<line x1=\"" << sx(t) << "\" y1=\"" << kT + ph << "\" x2=\"" << sx(t) << "\" y2=\"" << kT + ph + 5
      << "\" stroke=\"black\"/><text x=\"" << sx(t) << "\" y=\"" << kT + ph + 18 << "\" text-anchor=\"middle\">"
      << tick_label(t) << "</text>\n";
  }
  for (double t : nice_ticks(y0, y1)) {
    o << "<line x1=\"" << kL - 5 << "\" y1=\"" << sy(t) << "\" x2=\"" << kL + pw << "\" y2=\"" << sy(t)
      << "\" stroke=\"#ddd\"/><text x=\"" << kL - 8 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">"
      << tick_label(t) << "</text>\n";
  }
  o << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">" << escape_xml(x_label)
    << "</text>\n"
    << "<text transform=\"translate(18," << kT + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape_xml(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const PlotSeries& s = series[k];
    const char* colour = kColours[k % std::size(kColours)];
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
    }
    o << "\"/>\n";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        o << "<circle cx=\"" << sx(s.x[i]) << "\" cy=\"" << sy(s.y[i]) << "\" r=\"3\" fill=\"" << colour
          << "\"/>\n";
      }
    }
    const double ly = kT + 10 + 18 * static_cast<double>(k);
    o << "<line x1=\"" << kL + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << kL + pw + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/><text x=\"" << kL + pw + 35 << "\" y=\"" << ly + 4
      << "\">" << escape_xml(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << fmt_double(m(r, c));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    boost::algorithm::trim(line);
    if (line.empty()) continue;
    std::vector<std::string> parts;
    boost::algorithm::split(parts, line, boost::algorithm::is_space(), boost::algorithm::token_compress_on);
    std::vector<double> row;
    for (const auto& p : parts) row.push_back(parse_double(p, "matrix line " + std::to_string(line_no)));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::Io, "matrix line " + std::to_string(line_no) + " has a different column count");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Io, "empty matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  }
  return m;
}

void write_theta(std::ostream& out, const ParamVector& theta) {
  const Vec12 v = theta.flatten();
  for (int k = 0; k < 12; ++k) out << kThetaNames[std::size_t(k)] << " = " << fmt_double(v(k)) << '\n';
}

ParamVector read_theta(std::istream& in) {
  std::map<std::string, double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    boost::algorithm::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "parameter line " + std::to_string(line_no);
    if (eq == std::string::npos) throw Error(ErrorCode::Io, where + ": expected name = value");
    const std::string name = boost::algorithm::trim_copy(line.substr(0, eq));
    if (std::find(kThetaNames.begin(), kThetaNames.end(), name) == kThetaNames.end()) {
      throw Error(ErrorCode::Io, where + ": unknown parameter '" + name + "'");
    }
    if (!values.emplace(name, parse_double(line.substr(eq + 1), where)).second) {
      throw Error(ErrorCode::Io, where + ": repeated parameter '" + name + "'");
    }
  }
  Vec12 v;
  for (int k = 0; k < 12; ++k) {
    const auto it = values.find(kThetaNames[std::size_t(k)]);
    if (it == values.end()) throw Error(ErrorCode::Io, std::string("missing parameter '") + kThetaNames[std::size_t(k)] + "'");
    v(k) = it->second;
  }
  return ParamVector::unflatten(v);
}

void write_observations_csv(std::ostream& out, const std::vector<FeatureObservation>& obs) {
  out << "feature_id,q1x,q1y,q2x,q2y\n";
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out << i << ',' << fmt_double(obs[i].q1.x()) << ',' << fmt_double(obs[i].q1.y()) << ','
        << fmt_double(obs[i].q2.x()) << ',' << fmt_double(obs[i].q2.y()) << '\n';
  }
}

std::vector<FeatureObservation> read_observations_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Io, "observations file is empty");
  std::string header = line;
  header.erase(std::remove_if(header.begin(), header.end(), ::isspace), header.end());
  if (header != "feature_id,q1x,q1y,q2x,q2y") {
    throw Error(ErrorCode::Io, "observations header must be feature_id,q1x,q1y,q2x,q2y");
  }
  std::vector<FeatureObservation> obs;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    boost::algorithm::trim(line);
    if (line.empty()) continue;
    std::vector<std::string> parts;
    boost::algorithm::split(parts, line, boost::algorithm::is_any_of(","));
    const std::string where = "observations line " + std::to_string(line_no);
    if (parts.size() != 5) throw Error(ErrorCode::Io, where + ": expected 5 columns");
    std::array<double, 5> v{};
    for (std::size_t k = 0; k < 5; ++k) v[k] = parse_double(parts[k], where);
    if (v[0] != std::floor(v[0])) throw Error(ErrorCode::Io, where + ": feature_id must be an integer");
    obs.push_back({ImageRay(v[1], v[2]), ImageRay(v[3], v[4])});
  }
  return obs;
}

void save_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path);
}

std::string load_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace cdtm
