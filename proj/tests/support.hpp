#pragma once

// Shared fixtures and finite-difference oracles for the unit tests.

#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "cdtm/constraint.hpp"
#include "cdtm/dtm.hpp"
#include "cdtm/sim.hpp"

namespace cdtm::test {

/// Central differences of a vector function, one column per input entry.
inline Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn,
                                        const Eigen::VectorXd& x, const Eigen::VectorXd& steps) {
  const Eigen::VectorXd f0 = fn(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += steps(k);
    xm(k) -= steps(k);
    j.col(k) = (fn(xp) - fn(xm)) / (2.0 * steps(k));
  }
  return j;
}

/// Max |a - b| relative to max(|b|_max, floor).
inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-12) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), floor);
}

/// Plane h = a + b x + c y sampled on a grid.
inline TerrainGrid plane_grid(int rows, int cols, double spacing, double a, double b, double c) {
  Eigen::MatrixXd h(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int col = 0; col < cols; ++col) h(r, col) = a + b * col * spacing + c * r * spacing;
  }
  return TerrainGrid(Vec2::Zero(), spacing, h);
}

/// True anchors (ground point, terrain normal) of a scenario.
inline std::vector<FeatureAnchor> true_anchors(const Scenario& s) {
  std::vector<FeatureAnchor> a;
  for (const Vec3& g : s.ground) a.push_back({g, normal_at(s.grid, g.x(), g.y())});
  return a;
}

/// Small nominal-class scenario that builds fast.
inline ScenarioParams small_params(std::uint64_t seed, int n_features = 60) {
  ScenarioParams p;
  p.seed = seed;
  p.n_features = n_features;
  return p;
}

}  // namespace cdtm::test
