#include "doppel/error.hpp"

namespace doppel {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTooFewMatches: return "TooFewMatches";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kFitFailed: return "FitFailed";
    case ErrorCode::kSingularTransform: return "SingularTransform";
    case ErrorCode::kEmptyImage: return "EmptyImage";
    case ErrorCode::kSubsetViolation: return "SubsetViolation";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kDivergedLoss: return "DivergedLoss";
    case ErrorCode::kUnknownScene: return "UnknownScene";
    case ErrorCode::kInvalidAugmentation: return "InvalidAugmentation";
    case ErrorCode::kBadDimensions: return "BadDimensions";
    case ErrorCode::kSceneOverlap: return "SceneOverlap";
    case ErrorCode::kDegenerateLabels: return "DegenerateLabels";
    case ErrorCode::kDuplicateEdge: return "DuplicateEdge";
    case ErrorCode::kMissingProbability: return "MissingProbability";
    case ErrorCode::kMissingMatches: return "MissingMatches";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

}  // namespace doppel
