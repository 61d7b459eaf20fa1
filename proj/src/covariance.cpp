#include "cdtm/covariance.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cdtm/error.hpp"
#include "cdtm/kernels.hpp"

namespace cdtm {

namespace {

// N_P(q2, v) with P(q2, q2) already available.
Mat3 np_from(const FeatureGeometry& g) {
  const Mat3 p_v = Mat3::Identity() - g.v * g.v.transpose() / (g.depth * g.depth);
  return g.p_q2 * p_v / g.depth;
}

}  // namespace

Mat3 np_operator(const Vec3& q2, const Vec3& c2g) {
  const double depth = c2g.norm();
  if (!(depth > 1e-6)) throw Error(ErrorCode::DegenerateDepth, "second-camera point at the camera centre");
  return projector(q2) * projector(c2g) / depth;
}

Mat3x12 feature_jacobian(const ThetaFrames& frames, const FeatureObservation& /*obs*/,
                         const FeatureAnchor& /*anchor*/, const FeatureGeometry& geometry) {
  const Mat3 np = np_from(geometry);
  const Mat3 np_r12_l = np * frames.r12 * geometry.l;

  Mat3x12 j;
  j.block<3, 3>(0, 0) = -np_r12_l;
  for (std::size_t k = 0; k < 3; ++k) {
    // L depends on R1 only through 1 / (N^T R1 q1).
    j.col(3 + static_cast<Eigen::Index>(k)) = -np_r12_l * (frames.dr1[k] * geometry.c1g);
  }
  j.block<3, 3>(0, 6) = np;
  for (std::size_t k = 0; k < 3; ++k) {
    j.col(9 + static_cast<Eigen::Index>(k)) = np * (frames.dr12[k] * geometry.c1g);
  }
  return j;
}

Mat3 feature_jacobian_q2(const FeatureObservation& obs, const FeatureGeometry& geometry) {
  const Vec3& q2 = obs.q2.vec();
  const Vec3& v = geometry.v;
  return -(q2.dot(v) * Mat3::Identity() + q2 * v.transpose()) * geometry.p_q2 /
         (q2.squaredNorm() * geometry.depth);
}

Mat3 feature_jacobian_ground(const ThetaFrames& frames, const FeatureGeometry& geometry) {
  return np_from(geometry) * frames.r12 * geometry.l;
}

Eigen::MatrixXd jacobian_theta(const ParamVector& theta, std::span<const FeatureObservation> obs,
                               std::span<const FeatureAnchor> anchors, Exec exec) {
  if (obs.size() != anchors.size()) throw Error(ErrorCode::InvalidArgument, "observation/anchor count mismatch");
  const ThetaFrames frames(theta);
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd j(3 * n, 12);
  Eigen::VectorXd f(3 * n);
  std::vector<FeatureFault> faults;
  if (exec == Exec::Parallel) {
    kernels::omp::linearize(frames, obs, anchors, f, j, faults);
  } else {
    kernels::serial::linearize(frames, obs, anchors, f, j, faults);
  }
  throw_if_faults(std::move(faults), "jacobian");
  return j;
}

Eigen::MatrixXd DataJacobian::dense() const {
  const auto n = static_cast<Eigen::Index>(jq.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3 * n, 6 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.block<3, 3>(3 * i, 3 * i) = jq[static_cast<std::size_t>(i)];
    d.block<3, 3>(3 * i, 3 * n + 3 * i) = jg[static_cast<std::size_t>(i)];
  }
  return d;
}

DataJacobian jacobian_data(const ParamVector& theta, std::span<const FeatureObservation> obs,
                           std::span<const FeatureAnchor> anchors) {
  if (obs.size() != anchors.size()) throw Error(ErrorCode::InvalidArgument, "observation/anchor count mismatch");
  const ThetaFrames frames(theta);
  DataJacobian d;
  d.jq.resize(obs.size());
  d.jg.resize(obs.size());
  std::vector<FeatureFault> faults;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    try {
      const FeatureGeometry g = feature_geometry(frames, obs[i], anchors[i]);
      d.jq[i] = feature_jacobian_q2(obs[i], g);
      d.jg[i] = feature_jacobian_ground(frames, g);
    } catch (const Error& e) {
      faults.push_back({i, e.code()});
    }
  }
  throw_if_faults(std::move(faults), "data jacobian");
  return d;
}

Vec3 ground_height_sensitivity(const Vec3& q1, const Vec3& n, const Mat3& r1) {
  const Vec3 ray = r1 * q1;
  const double denom = n.dot(ray);
  if (!(std::abs(denom) >= 1e-9)) {
    throw Error(ErrorCode::RayParallelToPlane, "feature ray parallel to the terrain tangent plane");
  }
  return ray / denom;
}

Mat3 ground_covariance_block(const Vec3& q1, const Vec3& n, const Mat3& r1, double sigma_h) {
  const Vec3 s = ground_height_sensitivity(q1, n, r1);
  return sigma_h * sigma_h * s * s.transpose();
}

Mat3 image_covariance_block(double sigma_l) {
  return (sigma_l * sigma_l) * Vec3(1.0, 1.0, 0.0).asDiagonal();
}

Eigen::MatrixXd DataCovariance::dense() const {
  const auto n = static_cast<Eigen::Index>(sigma_q.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(6 * n, 6 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.block<3, 3>(3 * i, 3 * i) = sigma_q[static_cast<std::size_t>(i)];
    d.block<3, 3>(3 * n + 3 * i, 3 * n + 3 * i) = sigma_g[static_cast<std::size_t>(i)];
  }
  return d;
}

DataCovariance sigma_d(const NoiseModel& noise, const ParamVector& theta, std::span<const FeatureObservation> obs,
                       std::span<const FeatureAnchor> anchors) {
  if (obs.size() != anchors.size()) throw Error(ErrorCode::InvalidArgument, "observation/anchor count mismatch");
  if (noise.sigma_l < 0.0 || noise.sigma_h < 0.0) throw Error(ErrorCode::InvalidArgument, "negative noise std");
  const Mat3 r1 = rotation_from_euler(theta.a1).matrix();
  DataCovariance c;
  c.sigma_q.assign(obs.size(), image_covariance_block(noise.sigma_l));
  c.sigma_g.resize(obs.size());
  std::vector<FeatureFault> faults;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    try {
      c.sigma_g[i] = ground_covariance_block(obs[i].q1.vec(), anchors[i].n, r1, noise.sigma_h);
    } catch (const Error& e) {
      faults.push_back({i, e.code()});
    }
  }
  throw_if_faults(std::move(faults), "data covariance");
  return c;
}

namespace {

// J_T = V S^-1 U^T, refusing rank-deficient J_theta.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& j_theta) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(j_theta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (j_theta.cols() != 12 || sv.size() < 12 || !(sv(11) > kRankTolerance * sv(0))) {
    throw Error(ErrorCode::IllConditioned, "J_theta is rank deficient; covariance undefined");
  }
  return svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

Mat12 sigma_theta(const Eigen::MatrixXd& j_theta, const DataJacobian& j_data, const DataCovariance& sigma_data) {
  const auto n = static_cast<Eigen::Index>(j_data.jq.size());
  if (j_theta.rows() != 3 * n || j_theta.cols() != 12 || sigma_data.sigma_q.size() != j_data.jq.size() ||
      sigma_data.sigma_g.size() != j_data.jq.size()) {
    throw Error(ErrorCode::InvalidArgument, "covariance inputs have inconsistent sizes");
  }
  const Eigen::MatrixXd jt = pseudo_inverse(j_theta);
  Mat12 cov = Mat12::Zero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Mat3 sigma_f = j_data.jq[k] * sigma_data.sigma_q[k] * j_data.jq[k].transpose() +
                         j_data.jg[k] * sigma_data.sigma_g[k] * j_data.jg[k].transpose();
    const Eigen::Matrix<double, 12, 3> block = jt.middleCols<3>(3 * i);
    cov.noalias() += block * sigma_f * block.transpose();
  }
  return 0.5 * (cov + cov.transpose());
}

Mat6x12 second_pose_jacobian(const ParamVector& theta) {
  const Mat3 r1 = rotation_from_euler(theta.a1).matrix();
  const Mat3 r12 = rotation_from_euler(theta.a12).matrix();
  const auto dr1 = euler_derivatives(theta.a1);
  const auto dr12 = euler_derivatives(theta.a12);
  const Mat3 r2 = r1 * r12.transpose();
  if (std::abs(r2(0, 2)) >= 1.0 - 1e-9) {
    throw Error(ErrorCode::GimbalLock, "second pose at pitch +-90 degrees");
  }

  // Angles of R2 as functions of its entries.
  auto angle_rows = [&r2](const Mat3& dr2) {
    Vec3 d;
    const double den_phi = r2(1, 2) * r2(1, 2) + r2(2, 2) * r2(2, 2);
    const double den_psi = r2(0, 0) * r2(0, 0) + r2(0, 1) * r2(0, 1);
    d(0) = (r2(2, 2) * dr2(1, 2) - r2(1, 2) * dr2(2, 2)) / den_phi;
    d(1) = -dr2(0, 2) / std::sqrt(1.0 - r2(0, 2) * r2(0, 2));
    d(2) = (r2(0, 0) * dr2(0, 1) - r2(0, 1) * dr2(0, 0)) / den_psi;
    return d;
  };

  Mat6x12 j = Mat6x12::Zero();
  // p2 = p1 - R1 R12^T p12
  j.block<3, 3>(0, 0) = Mat3::Identity();
  j.block<3, 3>(0, 6) = -r2;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    const Mat3 dr2_a1 = dr1[k] * r12.transpose();
    const Mat3 dr2_a12 = r1 * dr12[k].transpose();
    j.block<3, 1>(0, 3 + c) = -dr2_a1 * theta.p12;
    j.block<3, 1>(0, 9 + c) = -dr2_a12 * theta.p12;
    j.block<3, 1>(3, 3 + c) = angle_rows(dr2_a1);
    j.block<3, 1>(3, 9 + c) = angle_rows(dr2_a12);
  }
  return j;
}

Mat6 sigma_c2(const ParamVector& theta, const Mat12& sigma_theta) {
  const Mat6x12 j = second_pose_jacobian(theta);
  const Mat6 c = j * sigma_theta * j.transpose();
  return 0.5 * (c + c.transpose());
}

double condition_number(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd sv = m.jacobiSvd().singularValues();
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

CovarianceReport analyze(const ParamVector& theta, std::span<const FeatureObservation> obs,
                         std::span<const FeatureAnchor> anchors, const NoiseModel& noise, Exec exec) {
  CovarianceReport r;
  r.noise = noise;
  r.j_theta = jacobian_theta(theta, obs, anchors, exec);
  r.condition_number = condition_number(r.j_theta);
  r.sigma_theta = sigma_theta(r.j_theta, jacobian_data(theta, obs, anchors), sigma_d(noise, theta, obs, anchors));
  r.sigma_c2 = sigma_c2(theta, r.sigma_theta);
  return r;
}

Eigen::MatrixXd node_height_correlation(const TerrainGrid& grid, std::span<const FeatureAnchor> anchors) {
  const auto n = static_cast<Eigen::Index>(anchors.size());
  std::vector<NodeWeights> w;
  w.reserve(anchors.size());
  for (const FeatureAnchor& a : anchors) w.push_back(bilinear_weights(grid, a.g_e.x(), a.g_e.y()));
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const NodeWeights& wi = w[static_cast<std::size_t>(i)];
    for (Eigen::Index j = i; j < n; ++j) {
      const NodeWeights& wj = w[static_cast<std::size_t>(j)];
      double sum = 0.0;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          if (wi.node[std::size_t(a)] == wj.node[std::size_t(b)]) sum += wi.w[std::size_t(a)] * wj.w[std::size_t(b)];
        }
      }
      c(i, j) = c(j, i) = sum;
    }
  }
  return c;
}

Mat12 sigma_theta_node_interpolated(const ParamVector& theta, std::span<const FeatureObservation> obs,
                                    std::span<const FeatureAnchor> anchors, const NoiseModel& noise,
                                    const TerrainGrid& grid, Exec exec) {
  const Eigen::MatrixXd j_theta = jacobian_theta(theta, obs, anchors, exec);
  const Eigen::MatrixXd jt = pseudo_inverse(j_theta);
  const DataJacobian jd = jacobian_data(theta, obs, anchors);
  const auto n = static_cast<Eigen::Index>(obs.size());
  const Mat3 r1 = rotation_from_euler(theta.a1).matrix();
  const Mat3 sq = image_covariance_block(noise.sigma_l);

  Mat12 cov = Mat12::Zero();
  Eigen::MatrixXd g(12, n);  // J_T S
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::Matrix<double, 12, 3> block = jt.middleCols<3>(3 * i);
    cov.noalias() += block * (jd.jq[k] * sq * jd.jq[k].transpose()) * block.transpose();
    g.col(i) = block * (jd.jg[k] * ground_height_sensitivity(obs[k].q1.vec(), anchors[k].n, r1));
  }
  cov.noalias() += noise.sigma_h * noise.sigma_h * g * node_height_correlation(grid, anchors) * g.transpose();
  return 0.5 * (cov + cov.transpose());
}

CovarianceReport analyze(const ParamVector& theta, std::span<const FeatureObservation> obs,
                         std::span<const FeatureAnchor> anchors, const NoiseModel& noise, const TerrainGrid& grid,
                         GroundErrorModel model, Exec exec) {
  if (model == GroundErrorModel::PointIndependent) return analyze(theta, obs, anchors, noise, exec);
  CovarianceReport r;
  r.noise = noise;
  r.j_theta = jacobian_theta(theta, obs, anchors, exec);
  r.condition_number = condition_number(r.j_theta);
  r.sigma_theta = sigma_theta_node_interpolated(theta, obs, anchors, noise, grid, exec);
  r.sigma_c2 = sigma_c2(theta, r.sigma_theta);
  return r;
}

}  // namespace cdtm
