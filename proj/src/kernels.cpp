#include "cdtm/kernels.hpp"

#include <omp.h>

#include "cdtm/covariance.hpp"

namespace cdtm::kernels {

namespace {

// Fault slot per feature; ErrorCode::InvalidArgument doubles as "no fault"
// only through the `has` flag.
struct FaultSlot {
  bool has = false;
  ErrorCode code = ErrorCode::InvalidArgument;
};

void collect(const std::vector<FaultSlot>& slots, std::vector<FeatureFault>& faults) {
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].has) faults.push_back({i, slots[i].code});
  }
}

void anchor_one(const Pose& pose, const ImageRay& q1, const TerrainGrid& grid, FeatureAnchor& out,
                FaultSlot& slot) {
  try {
    const SurfacePoint s = raycast(grid, pose.p, pose.r * q1.vec());
    out.g_e = s.g;
    out.n = s.n;
  } catch (const Error& e) {
    slot = {true, e.code()};
  }
}

void residual_one(const ThetaFrames& frames, const FeatureObservation& obs, const FeatureAnchor& anchor,
                  Eigen::Ref<Eigen::VectorXd> f, Eigen::Index i, FaultSlot& slot) {
  try {
    const FeatureGeometry g = feature_geometry(frames, obs, anchor);
    f.segment<3>(3 * i) = g.p_q2 * g.v / g.depth;
  } catch (const Error& e) {
    f.segment<3>(3 * i).setZero();
    slot = {true, e.code()};
  }
}

void linearize_one(const ThetaFrames& frames, const FeatureObservation& obs, const FeatureAnchor& anchor,
                   Eigen::Ref<Eigen::VectorXd> f, Eigen::Ref<Eigen::MatrixXd> j, Eigen::Index i,
                   FaultSlot& slot) {
  try {
    const FeatureGeometry g = feature_geometry(frames, obs, anchor);
    f.segment<3>(3 * i) = g.p_q2 * g.v / g.depth;
    j.block<3, 12>(3 * i, 0) = feature_jacobian(frames, obs, anchor, g);
  } catch (const Error& e) {
    f.segment<3>(3 * i).setZero();
    j.block<3, 12>(3 * i, 0).setZero();
    slot = {true, e.code()};
  }
}

void accumulate(const Eigen::MatrixXd& j, const Eigen::VectorXd& f, std::span<const double> weights,
                Eigen::Index begin, Eigen::Index end, NormalEquations& ne) {
  for (Eigen::Index i = begin; i < end; ++i) {
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const auto jb = j.block<3, 12>(3 * i, 0);
    ne.h.noalias() += w * jb.transpose() * jb;
    ne.g.noalias() += w * jb.transpose() * f.segment<3>(3 * i);
  }
}

}  // namespace

namespace serial {

void anchor(const Pose& pose, std::span<const ImageRay> q1, const TerrainGrid& grid,
            std::vector<FeatureAnchor>& out, std::vector<FeatureFault>& faults) {
  out.resize(q1.size());
  std::vector<FaultSlot> slots(q1.size());
  for (std::size_t i = 0; i < q1.size(); ++i) anchor_one(pose, q1[i], grid, out[i], slots[i]);
  collect(slots, faults);
}

void residuals(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               std::vector<FeatureFault>& faults) {
  std::vector<FaultSlot> slots(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    residual_one(frames, obs[i], anchors[i], f, static_cast<Eigen::Index>(i), slots[i]);
  }
  collect(slots, faults);
}

void linearize(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               Eigen::Ref<Eigen::MatrixXd> j, std::vector<FeatureFault>& faults) {
  std::vector<FaultSlot> slots(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    linearize_one(frames, obs[i], anchors[i], f, j, static_cast<Eigen::Index>(i), slots[i]);
  }
  collect(slots, faults);
}

NormalEquations normal_equations(const Eigen::MatrixXd& j, const Eigen::VectorXd& f,
                                 std::span<const double> weights) {
  NormalEquations ne;
  accumulate(j, f, weights, 0, j.rows() / 3, ne);
  return ne;
}

}  // namespace serial

namespace omp {

void anchor(const Pose& pose, std::span<const ImageRay> q1, const TerrainGrid& grid,
            std::vector<FeatureAnchor>& out, std::vector<FeatureFault>& faults) {
  out.resize(q1.size());
  std::vector<FaultSlot> slots(q1.size());
  const auto n = static_cast<long>(q1.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    anchor_one(pose, q1[k], grid, out[k], slots[k]);
  }
  collect(slots, faults);
}

void residuals(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               std::vector<FeatureFault>& faults) {
  std::vector<FaultSlot> slots(obs.size());
  const auto n = static_cast<long>(obs.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    residual_one(frames, obs[k], anchors[k], f, i, slots[k]);
  }
  collect(slots, faults);
}

void linearize(const ThetaFrames& frames, std::span<const FeatureObservation> obs,
               std::span<const FeatureAnchor> anchors, Eigen::Ref<Eigen::VectorXd> f,
               Eigen::Ref<Eigen::MatrixXd> j, std::vector<FeatureFault>& faults) {
  std::vector<FaultSlot> slots(obs.size());
  const auto n = static_cast<long>(obs.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    linearize_one(frames, obs[k], anchors[k], f, j, i, slots[k]);
  }
  collect(slots, faults);
}

NormalEquations normal_equations(const Eigen::MatrixXd& j, const Eigen::VectorXd& f,
                                 std::span<const double> weights) {
  const Eigen::Index n = j.rows() / 3;
  const Eigen::Index chunks = (n + kReductionChunk - 1) / kReductionChunk;
  std::vector<NormalEquations> partial(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index begin = c * kReductionChunk;
    const Eigen::Index end = std::min(n, begin + kReductionChunk);
    accumulate(j, f, weights, begin, end, partial[static_cast<std::size_t>(c)]);
  }
  NormalEquations ne;
  for (const auto& p : partial) {
    ne.h += p.h;
    ne.g += p.g;
  }
  return ne;
}

}  // namespace omp

NormalEquations normal_equations(const Eigen::MatrixXd& j, const Eigen::VectorXd& f,
                                 std::span<const double> weights, Exec exec) {
  return exec == Exec::Parallel ? omp::normal_equations(j, f, weights) : serial::normal_equations(j, f, weights);
}

}  // namespace cdtm::kernels
