#include <gtest/gtest.h>

#include <sstream>

#include "cdtm/config.hpp"
#include "cdtm/error.hpp"
#include "cdtm/report.hpp"

using namespace cdtm;

TEST(Report, MatrixRoundTrip) {
  Eigen::MatrixXd m(3, 4);
  m << 1.0 / 3, -2e-300, 5e15, 0, 1, 2, 3, 4, -0.1, 0.2, 1e-17, 7;
  std::stringstream ss;
  write_matrix(ss, m);
  EXPECT_EQ(read_matrix(ss), m);
  std::istringstream ragged("1 2 3\n4 5\n");
  EXPECT_THROW(read_matrix(ragged), Error);
  std::istringstream junk("1 2 x\n");
  EXPECT_THROW(read_matrix(junk), Error);
}

TEST(Report, ThetaRoundTrip) {
  ParamVector t;
  t.p1 = Vec3(1.5, -2.25, 500.125);
  t.a1 = {0.1, -0.2, 3.0};
  t.p12 = Vec3(40, 0.1, -1);
  t.a12 = {1.0 / 7, 0, -1e-9};
  std::stringstream ss;
  write_theta(ss, t);
  EXPECT_EQ(read_theta(ss).flatten(), t.flatten());
}

TEST(Report, ThetaErrors) {
  std::stringstream ss;
  write_theta(ss, ParamVector{});
  const std::string text = ss.str();
  std::istringstream missing(text.substr(0, text.rfind("psi12")));
  EXPECT_THROW(read_theta(missing), Error);
  std::istringstream extra(text + "roll = 1\n");
  EXPECT_THROW(read_theta(extra), Error);
  std::istringstream repeated(text + "p1x = 1\n");
  EXPECT_THROW(read_theta(repeated), Error);
}

TEST(Report, ObservationsRoundTripAndHeader) {
  const std::vector<FeatureObservation> obs{{ImageRay(0.1, -0.2), ImageRay(1.0 / 3, 0.25)},
                                            {ImageRay(-0.05, 0.0), ImageRay(0.01, -1e-7)}};
  std::stringstream ss;
  write_observations_csv(ss, obs);
  EXPECT_EQ(ss.str().substr(0, 26), "feature_id,q1x,q1y,q2x,q2y");
  const auto back = read_observations_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].q2.vec(), obs[0].q2.vec());
  EXPECT_EQ(back[1].q1.vec(), obs[1].q1.vec());

  std::istringstream no_header("0,0.1,0.2,0.3,0.4\n");
  EXPECT_THROW(read_observations_csv(no_header), Error);
  std::istringstream wrong_header("id,q1x,q1y,q2x,q2y\n0,0.1,0.2,0.3,0.4\n");
  EXPECT_THROW(read_observations_csv(wrong_header), Error);
  std::istringstream short_row("feature_id,q1x,q1y,q2x,q2y\n0,0.1,0.2,0.3\n");
  EXPECT_THROW(read_observations_csv(short_row), Error);
  std::istringstream spaced("feature_id, q1x, q1y, q2x, q2y\n7, 0.1, 0.2, 0.3, 0.4\n");
  EXPECT_EQ(read_observations_csv(spaced).size(), 1u);
}

TEST(Report, CsvSchemaLines) {
  TrialRecord t;
  t.converged = true;
  t.error = Vec12::Zero();
  std::stringstream ss;
  write_trials_csv(ss, {t});
  std::string first;
  std::getline(ss, first);
  EXPECT_EQ(first, kTrialsSchema);
  std::stringstream fs;
  write_fov_csv(fs, {FovPoint{}});
  std::getline(fs, first);
  EXPECT_EQ(first, kFovSchema);
}

TEST(Report, SvgPlotSkipsNonFinite) {
  const std::string svg =
      svg_line_plot("t", "x", "y", {{"a", {1, 2, 3}, {1, std::numeric_limits<double>::quiet_NaN(), 2}}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
}

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  EXPECT_TRUE(parse_config(format_config(c)) == c);
  EXPECT_TRUE(parse_config("") == c);
}

TEST(Config, EveryKeyRoundTrips) {
  RunConfig c;
  set_config_value(c, "scenario", "grid_spacing", "12.5");
  set_config_value(c, "solver", "robust", "huber");
  set_config_value(c, "solver", "huber_delta", "0.002");
  set_config_value(c, "montecarlo", "perturbation", "gaussian");
  set_config_value(c, "montecarlo", "gate", "false");
  set_config_value(c, "montecarlo", "analytic_model", "node");
  set_config_value(c, "montecarlo", "master_seed", "18446744073709551615");
  set_config_value(c, "sweep", "parameter", "baseline");
  set_config_value(c, "sweep", "values", "5, 20,40 ,95");
  set_config_value(c, "estimate", "terrain", "dir/terrain.asc");
  set_config_value(c, "scenario", "noise_scale", "0.1");
  EXPECT_EQ(c.sweep.values, (std::vector<double>{5, 20, 40, 95}));
  EXPECT_EQ(c.montecarlo.master_seed, 18446744073709551615ull);
  const std::string text = format_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(format_config(back), text);
  EXPECT_GE(config_keys().size(), 60u);
}

TEST(Config, ParsesSectionsAndComments) {
  const RunConfig c = parse_config(
      "# nominal with more trials\n[montecarlo]\ntrials = 300\n\n[scenario]\nn_features = 150\n");
  EXPECT_EQ(c.montecarlo.trials, 300);
  EXPECT_EQ(c.scenario.n_features, 150);
}

TEST(Config, Errors) {
  auto code = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code("[scenario]\nbogus = 1\n"), ErrorCode::Config);
  EXPECT_EQ(code("[nowhere]\ntrials = 1\n"), ErrorCode::Config);
  EXPECT_EQ(code("trials = 1\n"), ErrorCode::Config);
  EXPECT_EQ(code("[scenario]\nn_features = ten\n"), ErrorCode::Config);
  EXPECT_EQ(code("[scenario]\ngrid_spacing = -3\n"), ErrorCode::Config);
  EXPECT_EQ(code("[solver]\nrobust = tukey\n"), ErrorCode::Config);
  EXPECT_EQ(code("[montecarlo]\ngate = yes\n"), ErrorCode::Config);
  EXPECT_EQ(code("[scenario]\nseed = 1\nseed = 2\n"), ErrorCode::Config);
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), Error);
}
