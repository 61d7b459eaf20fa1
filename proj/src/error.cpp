#include "cdtm/error.hpp"

#include <algorithm>
#include <sstream>

namespace cdtm {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::GimbalLock: return "GimbalLock";
    case ErrorCode::DegenerateProjector: return "DegenerateProjector";
    case ErrorCode::RayParallelToPlane: return "RayParallelToPlane";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::OutOfExtent: return "OutOfExtent";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::DegenerateDepth: return "DegenerateDepth";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewFeatures: return "TooFewFeatures";
    case ErrorCode::AnchoringFailed: return "AnchoringFailed";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::LambdaOverflow: return "LambdaOverflow";
    case ErrorCode::NonPositiveDefinitePrior: return "NonPositiveDefinitePrior";
    case ErrorCode::InsufficientVisibleTerrain: return "InsufficientVisibleTerrain";
    case ErrorCode::AllTrialsDiverged: return "AllTrialsDiverged";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

Error::Error(ErrorCode code, const std::string& message, std::vector<FeatureFault> faults)
    : std::runtime_error(message), code_(code), faults_(std::move(faults)) {}

void throw_if_faults(std::vector<FeatureFault> faults, const std::string& context) {
  if (faults.empty()) return;
  std::sort(faults.begin(), faults.end(),
            [](const FeatureFault& a, const FeatureFault& b) { return a.index < b.index; });
  std::ostringstream msg;
  msg << context << ": " << faults.size() << " feature(s) failed (";
  const std::size_t shown = std::min<std::size_t>(faults.size(), 5);
  for (std::size_t i = 0; i < shown; ++i) {
    if (i) msg << ", ";
    msg << "#" << faults[i].index << " " << to_string(faults[i].code);
  }
  if (shown < faults.size()) msg << ", ...";
  msg << ")";
  const ErrorCode code = faults.front().code;
  throw Error(code, msg.str(), std::move(faults));
}

}  // namespace cdtm
