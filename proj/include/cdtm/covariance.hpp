#pragma once

// First-order error analysis of the pose and ego-motion estimate.
//
// The estimate minimizes |F(theta, D)|^2, where D stacks every q2 followed
// by every ground anchor G_E. Perturbing the optimality condition
// J_theta^T F = 0 to first order gives
//
//     Sigma_theta = J_T (J_D Sigma_D J_D^T) J_T^T,
//     J_T = (J_theta^T J_theta)^-1 J_theta^T
//
// with J_D = [J_q, J_G] block diagonal per feature and Sigma_D built from
// the image noise sigma_l and the terrain height noise sigma_h.
// Everything here is evaluated with the second-camera feature position
// taken as the model prediction v = p12 + R12 L (G_E - p1).

#include <span>
#include <vector>

#include <Eigen/Core>

#include "cdtm/constraint.hpp"
#include "cdtm/dtm.hpp"

namespace cdtm {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat3x12 = Eigen::Matrix<double, 3, 12>;
using Mat6x12 = Eigen::Matrix<double, 6, 12>;

struct NoiseModel {
  double sigma_l = 0.0;  // image-plane std at unit focal length
  double sigma_h = 0.0;  // terrain height std, meters
};

/// P(q2, q2) P(c2g, c2g) / |c2g|: derivative of the normalized residual
/// with respect to the predicted second-camera point. Throws
/// DegenerateDepth when |c2g| <= 1e-6.
Mat3 np_operator(const Vec3& q2, const Vec3& c2g);

/// One feature's 3x12 block of J_theta. Columns: p1, phi1, theta1, psi1,
/// p12, phi12, theta12, psi12.
Mat3x12 feature_jacobian(const ThetaFrames& frames, const FeatureObservation& obs, const FeatureAnchor& anchor,
                         const FeatureGeometry& geometry);

/// d f / d q2 (3x3). Only the x and y columns matter since q2.z is fixed.
Mat3 feature_jacobian_q2(const FeatureObservation& obs, const FeatureGeometry& geometry);

/// d f / d G_E (3x3), equal to -d f / d p1.
Mat3 feature_jacobian_ground(const ThetaFrames& frames, const FeatureGeometry& geometry);

/// 3n x 12. Per-feature failures are aggregated.
Eigen::MatrixXd jacobian_theta(const ParamVector& theta, std::span<const FeatureObservation> obs,
                               std::span<const FeatureAnchor> anchors, Exec exec = Exec::Parallel);

/// Block-diagonal J_q and J_G, stored as their 3x3 diagonal blocks.
struct DataJacobian {
  std::vector<Mat3> jq;
  std::vector<Mat3> jg;

  /// Dense 3n x 6n [J_q, J_G].
  Eigen::MatrixXd dense() const;
};

DataJacobian jacobian_data(const ParamVector& theta, std::span<const FeatureObservation> obs,
                           std::span<const FeatureAnchor> anchors);

/// Movement of a ray/plane intersection per unit height error of the plane:
/// R1 q1 / (N^T R1 q1). Throws RayParallelToPlane.
Vec3 ground_height_sensitivity(const Vec3& q1, const Vec3& n, const Mat3& r1);

/// sigma_h^2 R1 q1 q1^T R1^T / (N^T R1 q1)^2.
Mat3 ground_covariance_block(const Vec3& q1, const Vec3& n, const Mat3& r1, double sigma_h);

/// sigma_l^2 diag(1, 1, 0).
Mat3 image_covariance_block(double sigma_l);

/// Block-diagonal Sigma_D = diag(Sigma_q, Sigma_G); the q/G cross
/// covariance is zero.
struct DataCovariance {
  std::vector<Mat3> sigma_q;
  std::vector<Mat3> sigma_g;

  Eigen::MatrixXd dense() const;
};

DataCovariance sigma_d(const NoiseModel& noise, const ParamVector& theta, std::span<const FeatureObservation> obs,
                       std::span<const FeatureAnchor> anchors);

/// Rank threshold of the pseudo-inverse: singular values below this
/// fraction of the largest count as lost rank.
inline constexpr double kRankTolerance = 1e-10;

/// J_T (J_D Sigma_D J_D^T) J_T^T. Throws IllConditioned when J_theta loses
/// rank.
Mat12 sigma_theta(const Eigen::MatrixXd& j_theta, const DataJacobian& j_data, const DataCovariance& sigma_data);

/// Jacobian of (p2, phi2, theta2, psi2) with respect to the twelve
/// parameters. Throws GimbalLock near pitch +-90 deg of the second pose.
Mat6x12 second_pose_jacobian(const ParamVector& theta);

/// J_C2 Sigma_theta J_C2^T, the measurement covariance handed to a
/// navigation filter.
Mat6 sigma_c2(const ParamVector& theta, const Mat12& sigma_theta);

/// How terrain height errors reach the anchors.
enum class GroundErrorModel {
  // Every anchor's height error is independent with std sigma_h.
  PointIndependent,
  // Every DTM node carries an independent N(0, sigma_h^2) error and an
  // anchor sees the bilinear blend of its cell's four nodes. Anchors in
  // the same or neighbouring cells are then correlated, and a single
  // anchor's std drops to sigma_h sqrt(sum w^2).
  NodeInterpolated,
};

/// n x n correlation of anchor height errors under independent node noise:
/// C_ij = sum_k w_ik w_jk over the bilinear weights of anchors i and j.
Eigen::MatrixXd node_height_correlation(const TerrainGrid& grid, std::span<const FeatureAnchor> anchors);

/// Sigma_theta with the ground term taken from node noise:
/// J_T (J_q Sigma_q J_q^T + sigma_h^2 S C S^T) J_T^T, where column i of S
/// is feature i's J_G times its height sensitivity. Throws IllConditioned
/// like sigma_theta.
Mat12 sigma_theta_node_interpolated(const ParamVector& theta, std::span<const FeatureObservation> obs,
                                    std::span<const FeatureAnchor> anchors, const NoiseModel& noise,
                                    const TerrainGrid& grid, Exec exec = Exec::Parallel);

struct CovarianceReport {
  Mat12 sigma_theta;
  Mat6 sigma_c2;
  Eigen::MatrixXd j_theta;
  double condition_number = 0.0;
  NoiseModel noise;
};

/// Full analysis at theta.
CovarianceReport analyze(const ParamVector& theta, std::span<const FeatureObservation> obs,
                         std::span<const FeatureAnchor> anchors, const NoiseModel& noise,
                         Exec exec = Exec::Parallel);

/// Same analysis with a choice of ground error model; `grid` is only read
/// by NodeInterpolated.
CovarianceReport analyze(const ParamVector& theta, std::span<const FeatureObservation> obs,
                         std::span<const FeatureAnchor> anchors, const NoiseModel& noise, const TerrainGrid& grid,
                         GroundErrorModel model, Exec exec = Exec::Parallel);

/// Ratio of the largest to the smallest singular value (infinity when the
/// smallest is zero).
double condition_number(const Eigen::MatrixXd& m);

}  // namespace cdtm
