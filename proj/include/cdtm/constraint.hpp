#pragma once

// Residuals of the correspondence + terrain constraint.
//
// For a feature seen along q1 in the first frame and q2 in the second, with
// ground anchor G_E and tangent normal N, the predicted position of the
// feature in second-camera coordinates is
//
//     v = p12 + R12 * L * (G_E - p1),      L = q1 N^T / (N^T R1 q1)
//
// and the residual is the component of v orthogonal to q2, normalized by
// |v|:  f = P(q2, q2) v / |v|. It vanishes when q2 is parallel to v and has
// no component along q2, so each feature carries at most two constraints.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cdtm/dtm.hpp"
#include "cdtm/geom.hpp"

namespace cdtm {

using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

enum class Exec { Serial, Parallel };

/// The twelve unknowns. Flattened order: p1 (3), phi1 theta1 psi1,
/// p12 (3), phi12 theta12 psi12.
struct ParamVector {
  Vec3 p1 = Vec3::Zero();
  EulerAngles a1;
  Vec3 p12 = Vec3::Zero();
  EulerAngles a12;

  Vec12 flatten() const;
  static ParamVector unflatten(const Vec12& v);

  Pose pose1() const;
  RigidMotion motion() const;
  Pose pose2() const { return compose_second_pose(pose1(), motion()); }

  static ParamVector from_poses(const Pose& pose1, const RigidMotion& motion);
};

/// theta - other with angle components wrapped to (-pi, pi].
Vec12 param_difference(const ParamVector& theta, const ParamVector& other);

struct FeatureObservation {
  ImageRay q1;
  ImageRay q2;
};

struct FeatureAnchor {
  Vec3 g_e = Vec3::Zero();
  Vec3 n = Vec3::UnitZ();
};

/// Data entering the covariance analysis: all q2 rays followed by all
/// ground anchors, in feature order.
struct DataVector {
  std::vector<Vec3> q2_all;
  std::vector<Vec3> g_e_all;

  static DataVector from(std::span<const FeatureObservation> obs, std::span<const FeatureAnchor> anchors);
  Eigen::VectorXd flatten() const;
};

/// Rotation matrices and their Euler partials for one parameter vector.
struct ThetaFrames {
  explicit ThetaFrames(const ParamVector& theta);

  Vec3 p1;
  Vec3 p12;
  Mat3 r1;
  Mat3 r12;
  std::array<Mat3, 3> dr1;
  std::array<Mat3, 3> dr12;
};

/// Intermediate quantities of one feature's residual.
struct FeatureGeometry {
  Mat3 l;         // L operator
  Vec3 c1g;       // feature in first-camera coordinates, L (G_E - p1)
  Vec3 v;         // predicted feature in second-camera coordinates
  double depth;   // |v|
  Mat3 p_q2;      // P(q2, q2)
};

/// Throws RayParallelToPlane or DegenerateDepth.
FeatureGeometry feature_geometry(const ThetaFrames& frames, const FeatureObservation& obs,
                                 const FeatureAnchor& anchor);

/// Traces each first-frame ray from the guessed pose into the terrain.
/// NoIntersection (or OutOfExtent) failures are aggregated with feature
/// indices.
std::vector<FeatureAnchor> anchor_features(const Pose& pose_guess, std::span<const ImageRay> q1_list,
                                           const TerrainGrid& grid, Exec exec = Exec::Parallel);
std::vector<FeatureAnchor> anchor_features(const Pose& pose_guess, std::span<const FeatureObservation> obs,
                                           const TerrainGrid& grid, Exec exec = Exec::Parallel);

Vec3 residual_single(const ParamVector& theta, const FeatureObservation& obs, const FeatureAnchor& anchor);

/// Stacked residual F = [f_1; ...; f_n]. Per-feature failures are collected
/// and rethrown together.
Eigen::VectorXd residual_stack(const ParamVector& theta, std::span<const FeatureObservation> obs,
                               std::span<const FeatureAnchor> anchors, Exec exec = Exec::Parallel);

/// Unnormalized linear form A [p12; p1] = B for known rotations.
struct LinearSystem {
  Eigen::MatrixXd a;  // 3n x 6
  Eigen::VectorXd b;  // 3n
  Eigen::VectorXd singular_values;

  /// Least-squares (p12, p1).
  std::pair<Vec3, Vec3> solve() const;
};

/// Throws RankDeficient when the smallest singular value of A falls below
/// 1e-10 of the largest, or when fewer than three features are given.
LinearSystem linear_system(const Rotation& r1, const Rotation& r12, std::span<const FeatureObservation> obs,
                           std::span<const FeatureAnchor> anchors);

}  // namespace cdtm
