// Serial reference kernels against their OpenMP versions, and serial against
// parallel Monte-Carlo trials. Prints median wall time per call and checks
// that both paths agree.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "cdtm/kernels.hpp"
#include "cdtm/sim.hpp"

using namespace cdtm;

namespace {

double median_ms(int reps, const std::function<void()>& fn) {
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::nth_element(t.begin(), t.begin() + reps / 2, t.end());
  return t[static_cast<std::size_t>(reps / 2)];
}

void row(const char* name, double serial, double parallel, bool same) {
  std::printf("%-18s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   %s\n", name, serial, parallel,
              serial / parallel, same ? "identical" : "DIFFERENT");
}

}  // namespace

int main(int argc, char** argv) {
  const int n_features = argc > 1 ? std::atoi(argv[1]) : 2000;
  const int trials = argc > 2 ? std::atoi(argv[2]) : 16;
  std::printf("threads %d, features %d, trials %d\n", omp_get_max_threads(), n_features, trials);

  ScenarioParams p;
  p.n_features = n_features;
  const Scenario s = build_scenario(p);
  const ObservationSet data = generate_observations(s, 11);
  const ParamVector theta = data.truth;
  const ThetaFrames frames(theta);
  std::vector<ImageRay> q1;
  for (const auto& o : data.obs) q1.push_back(o.q1);
  const auto n = static_cast<Eigen::Index>(data.obs.size());

  std::vector<FeatureAnchor> a_serial, a_omp;
  std::vector<FeatureFault> faults;
  const double t_as = median_ms(9, [&] { kernels::serial::anchor(theta.pose1(), q1, data.estimator_grid, a_serial, faults); });
  const double t_ao = median_ms(9, [&] { kernels::omp::anchor(theta.pose1(), q1, data.estimator_grid, a_omp, faults); });
  bool same = a_serial.size() == a_omp.size();
  for (std::size_t i = 0; same && i < a_serial.size(); ++i) {
    same = a_serial[i].g_e == a_omp[i].g_e && a_serial[i].n == a_omp[i].n;
  }
  row("anchor", t_as, t_ao, same);

  Eigen::VectorXd fs(3 * n), fo(3 * n);
  Eigen::MatrixXd js(3 * n, 12), jo(3 * n, 12);
  const double t_ls = median_ms(15, [&] { kernels::serial::linearize(frames, data.obs, a_serial, fs, js, faults); });
  const double t_lo = median_ms(15, [&] { kernels::omp::linearize(frames, data.obs, a_serial, fo, jo, faults); });
  row("linearize", t_ls, t_lo, fs == fo && js == jo);

  kernels::NormalEquations ns, no;
  const double t_ns = median_ms(15, [&] { ns = kernels::serial::normal_equations(js, fs, {}); });
  const double t_no = median_ms(15, [&] { no = kernels::omp::normal_equations(js, fs, {}); });
  row("normal_equations", t_ns, t_no, ((ns.h - no.h).norm() <= 1e-12 * ns.h.norm()));

  ScenarioParams nominal;
  const Scenario sn = build_scenario(nominal);
  MonteCarloOptions mc;
  mc.trials = trials;
  std::vector<TrialRecord> rs, rp;
  mc.exec = Exec::Serial;
  const double t_ms = median_ms(1, [&] { rs = run_trials(sn, mc); });
  mc.exec = Exec::Parallel;
  const double t_mp = median_ms(1, [&] { rp = run_trials(sn, mc); });
  bool same_trials = rs.size() == rp.size();
  for (std::size_t i = 0; same_trials && i < rs.size(); ++i) {
    same_trials = rs[i].error.cwiseEqual(rp[i].error).all() && rs[i].iterations == rp[i].iterations;
  }
  row("monte-carlo trials", t_ms, t_mp, same_trials);
  return 0;
}
