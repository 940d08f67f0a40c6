#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maskedkrum {

enum class ErrorCode {
  kDimension,       // vector lengths disagree
  kValidation,      // malformed value (non-finite, out of range, asymmetric)
  kRank,            // codebook cannot be orthogonalized in d dimensions
  kDegenerate,      // Gram-Schmidt residual collapsed after all retries
  kResilience,      // N >= 2f + 3 violated
  kWorkerMismatch,  // partial matrices from the wrong workers
  kAuthentication,  // sealed message failed to open
  kFormat,          // bad on-disk or wire encoding
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every library failure is reported as an Error carrying a code, so callers
// can branch on the failure class without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace maskedkrum
