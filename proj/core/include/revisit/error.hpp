#pragma once

#include <stdexcept>
#include <string>

namespace revisit {

// Failure categories surfaced by the library. The CLI maps these to exit
// codes; tests assert on specific codes.
enum class ErrorCode {
  kConfig,                  // bad config file, unknown key, invalid value
  kIo,                      // missing/unreadable/unwritable file
  kFormat,                  // malformed file content
  kAngleNearPi,             // rotation log at/near the pi singularity
  kBorderViolation,         // pixel op too close to the image border
  kDegenerateImage,         // no selectable structure in the image
  kEmptyInput,              // empty training/input set
  kInsufficientData,        // fewer samples than the minimum required
  kDegenerateConfiguration, // collinear/coincident geometry
  kRankDeficient,           // normal matrix numerically singular
  kDiverged,                // iterative solver failed to decrease the cost
  kUnknownKeyframe,         // id not present in graph/database
  kNotConnected,            // free node unreachable from any anchored node
  kSolverFailure,           // factorization failed after max damping
  kNoAssociations,          // trajectory association produced < 3 pairs
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kFormat: return "Format";
    case ErrorCode::kAngleNearPi: return "AngleNearPi";
    case ErrorCode::kBorderViolation: return "BorderViolation";
    case ErrorCode::kDegenerateImage: return "DegenerateImage";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kDegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kDiverged: return "Diverged";
    case ErrorCode::kUnknownKeyframe: return "UnknownKeyframe";
    case ErrorCode::kNotConnected: return "NotConnected";
    case ErrorCode::kSolverFailure: return "SolverFailure";
    case ErrorCode::kNoAssociations: return "NoAssociations";
  }
  return "Unknown";
}

}  // namespace revisit
