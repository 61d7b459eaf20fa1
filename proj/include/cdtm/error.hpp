#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdtm {

enum class ErrorCode {
  InvalidArgument,
  GimbalLock,
  DegenerateProjector,
  RayParallelToPlane,
  BehindCamera,
  OutOfExtent,
  NoIntersection,
  DegenerateDepth,
  RankDeficient,
  TooFewFeatures,
  AnchoringFailed,
  NotConverged,
  IllConditioned,
  LambdaOverflow,
  NonPositiveDefinitePrior,
  InsufficientVisibleTerrain,
  AllTrialsDiverged,
  Io,
  Config,
};

/// Stable machine-readable name, e.g. "GimbalLock".
const char* to_string(ErrorCode code);

/// Failure attached to one feature of a multi-feature evaluation.
struct FeatureFault {
  std::size_t index;
  ErrorCode code;
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  Error(ErrorCode code, const std::string& message, std::vector<FeatureFault> faults);

  ErrorCode code() const noexcept { return code_; }

  /// Offending features, in index order. Empty for errors not tied to features.
  const std::vector<FeatureFault>& faults() const noexcept { return faults_; }

 private:
  ErrorCode code_;
  std::vector<FeatureFault> faults_;
};

/// Throws an aggregated Error when any fault was recorded. The first fault's
/// code becomes the error code.
void throw_if_faults(std::vector<FeatureFault> faults, const std::string& context);

}  // namespace cdtm
