#include "maskedkrum/error.hpp"

namespace maskedkrum {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kRank: return "rank";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kResilience: return "resilience";
    case ErrorCode::kWorkerMismatch: return "worker-mismatch";
    case ErrorCode::kAuthentication: return "authentication";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace maskedkrum
