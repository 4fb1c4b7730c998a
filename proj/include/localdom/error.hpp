#pragma once

#include <stdexcept>
#include <string>

namespace localdom {

enum class ErrorCode {
  kInvalidArgument = 1,
  kUnknownClass,
  kDegenerateGeometry,
  kEmptyDomain,
  kShapeMismatch,
  kOutOfRange,
  kTooSmall,
  kDiverged,
  kMissingVae,
  kBadOverlap,
  kPlanMismatch,
  kEmptySet,
  kBackendMissing,
  kMissingFile,
  kChecksumMismatch,
  kBadSchema,
  kIoError,
  kStageOrder,
  kAccessViolation,
  kBadCheckpoint,
};

const char* error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace localdom
