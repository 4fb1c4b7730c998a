#include "localdom/error.hpp"

namespace localdom {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kDegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::kEmptyDomain: return "EmptyDomain";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kTooSmall: return "TooSmall";
    case ErrorCode::kDiverged: return "Diverged";
    case ErrorCode::kMissingVae: return "MissingVae";
    case ErrorCode::kBadOverlap: return "BadOverlap";
    case ErrorCode::kPlanMismatch: return "PlanMismatch";
    case ErrorCode::kEmptySet: return "EmptySet";
    case ErrorCode::kBackendMissing: return "BackendMissing";
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kBadSchema: return "BadSchema";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kStageOrder: return "StageOrder";
    case ErrorCode::kAccessViolation: return "AccessViolation";
    case ErrorCode::kBadCheckpoint: return "BadCheckpoint";
  }
  return "Unknown";
}

}  // namespace localdom
