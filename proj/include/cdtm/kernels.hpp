#pragma once

// Per-feature data-parallel kernels.
//
// Each kernel exists twice: `serial` is the straightforward reference loop
// kept for testing and benchmarking, `omp` distributes features over OpenMP
// threads. Per-feature outputs go to disjoint slots, so both produce
// bitwise-identical results. The normal-equation reduction in `omp` sums
// fixed-size chunks in chunk order, which makes it independent of the
// thread count (but not bitwise equal to the serial running sum).

#include <span>
#include <vector>

#include <Eigen/Core>

#include "cdtm/constraint.hpp"
#include "cdtm/error.hpp"

namespace cdtm::kernels {

/// Weighted Gauss-Newton system H = J^T W J, g = J^T W F with one weight
/// per feature (a 3-row block of J and F).
struct NormalEquations {
  Mat12 h = Mat12::Zero();
  Vec12 g = Vec12::Zero();
};

/// Features per chunk of the deterministic parallel reduction.
inline constexpr Eigen::Index kReductionChunk = 32;

namespace serial {

void anchor(const Pose& pose, std::span<const ImageRay> q1, const TerrainGrid& grid,
            std::vector<FeatureAnchor>& out, std::vector<FeatureFault>& faults);

void residuals(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               std::vector<FeatureFault>& faults);

/// Residuals and the 3n x 12 Jacobian together.
void linearize(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               Eigen::Ref<Eigen::MatrixXd> j, std::vector<FeatureFault>& faults);

/// Empty `weights` means all ones.
NormalEquations normal_equations(const Eigen::MatrixXd& j, const Eigen::VectorXd& f,
                                 std::span<const double> weights);

}  // namespace serial

namespace omp {

void anchor(const Pose& pose, std::span<const ImageRay> q1, const TerrainGrid& grid,
            std::vector<FeatureAnchor>& out, std::vector<FeatureFault>& faults);

void residuals(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               std::vector<FeatureFault>& faults);

void linearize(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               Eigen::Ref<Eigen::MatrixXd> j, std::vector<FeatureFault>& faults);

NormalEquations normal_equations(const Eigen::MatrixXd& j, const Eigen::VectorXd& f,
                                 std::span<const double> weights);

}  // namespace omp

/// Dispatch on the execution policy.
NormalEquations normal_equations(const Eigen::MatrixXd& j, const Eigen::VectorXd& f,
                                 std::span<const double> weights, Exec exec);

}  // namespace cdtm::kernels
