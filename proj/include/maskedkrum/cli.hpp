#pragma once

#include <ostream>

namespace maskedkrum::cli {

// Entry point behind the maskedkrum executable. Returns 0 on success, 1 on
// validation or round failures and 2 on usage errors.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace maskedkrum::cli
