#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

#include "maskedkrum/core_model.hpp"

namespace maskedkrum {

// Header "client_id,v0,...,v{d-1}", one row per client, values written with
// 17 significant digits so they round-trip exactly.
std::vector<GradientVector> read_gradient_csv(std::istream& in);
std::vector<GradientVector> read_gradient_csv(const std::filesystem::path& path);
void write_gradient_csv(std::ostream& out, const std::vector<GradientVector>& rows);

}  // namespace maskedkrum
