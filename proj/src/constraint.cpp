#include "cdtm/constraint.hpp"

#include <Eigen/Dense>

#include "cdtm/error.hpp"
#include "cdtm/kernels.hpp"

namespace cdtm {

Vec12 ParamVector::flatten() const {
  Vec12 v;
  v << p1, a1.phi, a1.theta, a1.psi, p12, a12.phi, a12.theta, a12.psi;
  return v;
}

ParamVector ParamVector::unflatten(const Vec12& v) {
  ParamVector t;
  t.p1 = v.segment<3>(0);
  t.a1 = {v(3), v(4), v(5)};
  t.p12 = v.segment<3>(6);
  t.a12 = {v(9), v(10), v(11)};
  return t;
}

Pose ParamVector::pose1() const { return Pose{p1, rotation_from_euler(a1)}; }

RigidMotion ParamVector::motion() const { return RigidMotion{p12, rotation_from_euler(a12)}; }

ParamVector ParamVector::from_poses(const Pose& pose1, const RigidMotion& motion) {
  ParamVector t;
  t.p1 = pose1.p;
  t.a1 = euler_from_rotation(pose1.r);
  t.p12 = motion.p12;
  t.a12 = euler_from_rotation(motion.r12);
  return t;
}

Vec12 param_difference(const ParamVector& theta, const ParamVector& other) {
  Vec12 d = theta.flatten() - other.flatten();
  for (int i : {3, 4, 5, 9, 10, 11}) d(i) = wrap_angle(d(i));
  return d;
}

DataVector DataVector::from(std::span<const FeatureObservation> obs, std::span<const FeatureAnchor> anchors) {
  if (obs.size() != anchors.size()) throw Error(ErrorCode::InvalidArgument, "observation/anchor count mismatch");
  DataVector d;
  d.q2_all.reserve(obs.size());
  d.g_e_all.reserve(obs.size());
  for (const auto& o : obs) d.q2_all.push_back(o.q2.vec());
  for (const auto& a : anchors) d.g_e_all.push_back(a.g_e);
  return d;
}

Eigen::VectorXd DataVector::flatten() const {
  const auto n = static_cast<Eigen::Index>(q2_all.size());
  Eigen::VectorXd v(6 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v.segment<3>(3 * i) = q2_all[static_cast<std::size_t>(i)];
    v.segment<3>(3 * n + 3 * i) = g_e_all[static_cast<std::size_t>(i)];
  }
  return v;
}

ThetaFrames::ThetaFrames(const ParamVector& theta)
    : p1(theta.p1),
      p12(theta.p12),
      r1(rotation_from_euler(theta.a1).matrix()),
      r12(rotation_from_euler(theta.a12).matrix()),
      dr1(euler_derivatives(theta.a1)),
      dr12(euler_derivatives(theta.a12)) {}

FeatureGeometry feature_geometry(const ThetaFrames& frames, const FeatureObservation& obs,
                                 const FeatureAnchor& anchor) {
  const Vec3& q1 = obs.q1.vec();
  const double denom = anchor.n.dot(frames.r1 * q1);
  if (!(std::abs(denom) >= 1e-9)) {
    throw Error(ErrorCode::RayParallelToPlane, "feature ray parallel to the terrain tangent plane");
  }
  FeatureGeometry g;
  g.l = q1 * anchor.n.transpose() / denom;
  g.c1g = g.l * (anchor.g_e - frames.p1);
  g.v = frames.p12 + frames.r12 * g.c1g;
  g.depth = g.v.norm();
  if (!(g.depth > 1e-6)) throw Error(ErrorCode::DegenerateDepth, "predicted feature at the second camera centre");
  g.p_q2 = projector(obs.q2.vec());
  return g;
}

std::vector<FeatureAnchor> anchor_features(const Pose& pose_guess, std::span<const ImageRay> q1_list,
                                           const TerrainGrid& grid, Exec exec) {
  std::vector<FeatureAnchor> anchors(q1_list.size());
  std::vector<FeatureFault> faults;
  if (exec == Exec::Parallel) {
    kernels::omp::anchor(pose_guess, q1_list, grid, anchors, faults);
  } else {
    kernels::serial::anchor(pose_guess, q1_list, grid, anchors, faults);
  }
  throw_if_faults(std::move(faults), "anchoring");
  return anchors;
}

std::vector<FeatureAnchor> anchor_features(const Pose& pose_guess, std::span<const FeatureObservation> obs,
                                           const TerrainGrid& grid, Exec exec) {
  std::vector<ImageRay> q1(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) q1[i] = obs[i].q1;
  return anchor_features(pose_guess, std::span<const ImageRay>(q1), grid, exec);
}

Vec3 residual_single(const ParamVector& theta, const FeatureObservation& obs, const FeatureAnchor& anchor) {
  const ThetaFrames frames(theta);
  const FeatureGeometry g = feature_geometry(frames, obs, anchor);
  return g.p_q2 * g.v / g.depth;
}

Eigen::VectorXd residual_stack(const ParamVector& theta, std::span<const FeatureObservation> obs,
                               std::span<const FeatureAnchor> anchors, Exec exec) {
  if (obs.size() != anchors.size()) throw Error(ErrorCode::InvalidArgument, "observation/anchor count mismatch");
  if (obs.empty()) throw Error(ErrorCode::InvalidArgument, "no features");
  const ThetaFrames frames(theta);
  Eigen::VectorXd f(3 * static_cast<Eigen::Index>(obs.size()));
  std::vector<FeatureFault> faults;
  if (exec == Exec::Parallel) {
    kernels::omp::residuals(frames, obs, anchors, f, faults);
  } else {
    kernels::serial::residuals(frames, obs, anchors, f, faults);
  }
  throw_if_faults(std::move(faults), "residual evaluation");
  return f;
}

std::pair<Vec3, Vec3> LinearSystem::solve() const {
  const Eigen::VectorXd x = a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  return {x.segment<3>(0), x.segment<3>(3)};
}

LinearSystem linear_system(const Rotation& r1, const Rotation& r12, std::span<const FeatureObservation> obs,
                           std::span<const FeatureAnchor> anchors) {
  if (obs.size() != anchors.size()) throw Error(ErrorCode::InvalidArgument, "observation/anchor count mismatch");
  if (obs.size() < 3) throw Error(ErrorCode::RankDeficient, "fewer than three features");
  const auto n = static_cast<Eigen::Index>(obs.size());
  LinearSystem sys;
  sys.a.resize(3 * n, 6);
  sys.b.resize(3 * n);
  std::vector<FeatureFault> faults;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    const auto& an = anchors[static_cast<std::size_t>(i)];
    try {
      const Mat3 p = projector(o.q2.vec());
      const Mat3 k = p * r12.matrix() * l_operator(o.q1, an.n, r1);
      sys.a.block<3, 3>(3 * i, 0) = -p;
      sys.a.block<3, 3>(3 * i, 3) = k;
      sys.b.segment<3>(3 * i) = k * an.g_e;
    } catch (const Error& e) {
      faults.push_back({static_cast<std::size_t>(i), e.code()});
    }
  }
  throw_if_faults(std::move(faults), "linear system");
  sys.singular_values = sys.a.jacobiSvd().singularValues();
  const double smax = sys.singular_values(0);
  const double smin = sys.singular_values(sys.singular_values.size() - 1);
  if (!(smin > 1e-10 * smax)) {
    throw Error(ErrorCode::RankDeficient, "position system has rank below 6");
  }
  return sys;
}

}  // namespace cdtm
