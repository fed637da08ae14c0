#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace doppel {

enum class ErrorCode {
  kTooFewMatches,
  kDegenerateConfiguration,
  kFitFailed,
  kSingularTransform,
  kEmptyImage,
  kSubsetViolation,
  kShapeMismatch,
  kParseError,
  kVersionMismatch,
  kInvalidParams,
  kEmptyDataset,
  kDivergedLoss,
  kUnknownScene,
  kInvalidAugmentation,
  kBadDimensions,
  kSceneOverlap,
  kDegenerateLabels,
  kDuplicateEdge,
  kMissingProbability,
  kMissingMatches,
  kIoError,
};

// Stable identifier used in CLI error lines, e.g. "TooFewMatches".
std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace doppel
