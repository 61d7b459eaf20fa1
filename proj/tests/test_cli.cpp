#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdtm/cli.hpp"
#include "cdtm/config.hpp"
#include "cdtm/dtm_io.hpp"
#include "cdtm/report.hpp"

using namespace cdtm;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "cdtm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return load_text(p.string()); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cdtm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string at(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenTerrainRangeAndDeterminism) {
  ASSERT_EQ(run({"--out", at("a"), "gen-terrain"}).code, 0);
  const TerrainGrid g = load_asc(at("a/terrain.asc"));
  EXPECT_EQ(g.rows(), 101);
  EXPECT_NEAR(g.max_height() - g.min_height(), 300.0, 3.0);
  ASSERT_EQ(run({"--out", at("b"), "gen-terrain"}).code, 0);
  EXPECT_EQ(slurp(at("a/terrain.asc")), slurp(at("b/terrain.asc")));
  ASSERT_EQ(run({"gen-terrain", "--range", "0", "--rows", "20", "-o", at("flat.asc")}).code, 0);
  const TerrainGrid f = load_asc(at("flat.asc"));
  EXPECT_EQ(f.rows(), 20);
  EXPECT_EQ(f.max_height(), f.min_height());
}

TEST_F(Cli, EstimateRecoversNoiselessScenario) {
  ASSERT_EQ(run({"--out", dir_.string(), "gen-scenario", "--noiseless", "--seed", "3"}).code, 0);
  const CliRun r = run({"--out", at("est"), "estimate", "--observations", at("observations.csv"), "--terrain",
                     at("terrain.asc"), "--initial", at("initial.txt")});
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  std::istringstream truth(slurp(at("truth.txt"))), est(slurp(at("est/theta.txt")));
  const Vec12 e = param_difference(read_theta(est), read_theta(truth));
  EXPECT_LT(e.cwiseAbs().maxCoeff(), 1e-6);
  std::istringstream cov(slurp(at("est/sigma_theta.txt")));
  const Eigen::MatrixXd m = read_matrix(cov);
  EXPECT_EQ(m.rows(), 12);
  EXPECT_EQ(m.cols(), 12);
  EXPECT_NE(slurp(at("est/diagnostics.txt")).find("converged = true"), std::string::npos);
}

TEST_F(Cli, EstimateOnFlatTerrainIsDegenerate) {
  ASSERT_EQ(
      run({"--set", "scenario.elevation_range=0", "--out", dir_.string(), "gen-scenario", "--noiseless"}).code, 0);
  const CliRun r = run({"--out", at("est"), "estimate", "--observations", at("observations.csv"), "--terrain",
                     at("terrain.asc"), "--initial", at("initial.txt")});
  EXPECT_EQ(r.code, static_cast<int>(ExitCode::Degenerate)) << r.out << r.err;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({"estimate", "--observations", at("none.csv"), "--terrain", at("none.asc"), "--initial",
                 at("none.txt")})
                .code,
            2);
  EXPECT_EQ(run({"estimate"}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--set", "scenario.altitude_max=3", "show-config"}).code, 2);
  EXPECT_EQ(run({"--set", "nodot", "show-config"}).code, 2);
  EXPECT_EQ(run({"--config", at("missing.cfg"), "show-config"}).code, 2);
  std::ofstream(at("bad.cfg")) << "[solver]\nmax_iter = 5\n";
  EXPECT_EQ(run({"--config", at("bad.cfg"), "show-config"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(Cli, ConfigPrecedenceAndRoundTrip) {
  std::ofstream(at("run.cfg")) << "[montecarlo]\ntrials = 7\nmaster_seed = 5\n";
  const CliRun r = run({"--config", at("run.cfg"), "--set", "montecarlo.trials=9", "show-config"});
  ASSERT_EQ(r.code, 0);
  const RunConfig c = parse_config(r.out);
  EXPECT_EQ(c.montecarlo.trials, 9);
  EXPECT_EQ(c.montecarlo.master_seed, 5u);
  std::ofstream(at("full.cfg")) << r.out;
  EXPECT_EQ(run({"--config", at("full.cfg"), "show-config"}).out, r.out);
}

TEST_F(Cli, MonteCarloRerunIsBitwiseIdentical) {
  const std::vector<std::string> common{"--set", "scenario.n_features=80"};
  for (const char* sub : {"a", "b"}) {
    auto args = common;
    for (const std::string& s : {std::string("--out"), at(sub), std::string("montecarlo"), std::string("--trials"),
                                 std::string("4")}) {
      args.push_back(s);
    }
    const CliRun r = run(args);
    ASSERT_TRUE(r.code == 0 || r.code == 3) << r.err;
  }
  EXPECT_EQ(slurp(at("a/trials.csv")), slurp(at("b/trials.csv")));
  EXPECT_EQ(slurp(at("a/summary.csv")), slurp(at("b/summary.csv")));
  EXPECT_EQ(slurp(at("a/trials.csv")).rfind(kTrialsSchema, 0), 0u);
  EXPECT_TRUE(fs::exists(at("a/montecarlo.svg")));
  std::istringstream cfg(slurp(at("a/run.cfg")));
  EXPECT_EQ(parse_config(cfg.str()).montecarlo.trials, 4);
}

TEST_F(Cli, SweepWritesOneRowPerValue) {
  const CliRun r = run({"--set", "scenario.n_features=60", "--out", dir_.string(), "sweep", "--parameter",
                     "n_features", "--values", "10,25,50,100,150,200,300", "--trials", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(at("sweep.csv")));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) rows += !line.empty() && line[0] != '#';
  EXPECT_EQ(rows, 1 + 7);
  EXPECT_TRUE(fs::exists(at("sweep_position.svg")));
}

TEST_F(Cli, FovStudy) {
  const CliRun r = run({"--out", dir_.string(), "fov", "--values", "5,60", "--trials", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(at("fov.csv")).rfind(kFovSchema, 0), 0u);
}
