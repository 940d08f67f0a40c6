#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace maskedkrum {

// N mask vectors with pairwise squared distance C and squared norm C/2.
struct NoiseCodebook {
  std::size_t n = 0;
  std::size_t dim = 0;
  double constant = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> vectors;  // n rows of dim values, row-major

  std::span<const double> row(std::size_t i) const {
    return {vectors.data() + i * dim, dim};
  }
  std::span<double> row(std::size_t i) {
    return {vectors.data() + i * dim, dim};
  }

  friend bool operator==(const NoiseCodebook&, const NoiseCodebook&) = default;
};

struct CodebookReport {
  std::size_t pairs_checked = 0;
  double max_pair_deviation = 0.0;  // max |‖Ri - Rj‖² - C|
  double max_norm_deviation = 0.0;  // max |‖Ri‖² - C/2|
  double max_abs_dot = 0.0;         // max |Ri · Rj|, i != j
  double tolerance = 0.0;           // 1e-8 * C
  bool pass = false;
};

inline constexpr double kCodebookRelTolerance = 1e-8;
inline constexpr double kDegenerateResidual = 1e-12;
inline constexpr int kCodebookRetries = 3;

// Draws N Gaussian vectors from a generator seeded with `seed`, orthogonalizes
// them with modified Gram-Schmidt plus one re-orthogonalization pass and scales
// each to norm sqrt(C/2).
NoiseCodebook build_codebook(std::size_t n, std::size_t dim, double constant,
                             std::uint64_t seed);

namespace detail {
// Same construction with an injected entry source, so degenerate draws can be
// exercised. `fill` receives a whole n x dim block per attempt.
using DrawBlock = std::function<void(std::span<double>)>;
NoiseCodebook build_codebook_from(std::size_t n, std::size_t dim,
                                  double constant, std::uint64_t seed,
                                  const DrawBlock& fill);
}  // namespace detail

CodebookReport verify_codebook(const NoiseCodebook& cb);

// sqrt(C / 2d): the per-coordinate scale of an i.i.d. Gaussian mask of the
// same expected squared norm.
double equivalent_sigma(const NoiseCodebook& cb);

// NCBK encoding: 32-byte little-endian header followed by n*dim f64 values.
inline constexpr std::array<char, 4> kCodebookMagic{'N', 'C', 'B', 'K'};
inline constexpr std::uint16_t kCodebookVersion = 1;
inline constexpr std::size_t kCodebookHeaderSize = 32;

std::vector<std::uint8_t> encode_codebook(const NoiseCodebook& cb);
NoiseCodebook decode_codebook(std::span<const std::uint8_t> bytes);
// Parses only the 32-byte header; `vectors` stays empty.
NoiseCodebook decode_codebook_header(std::span<const std::uint8_t> bytes);

void write_codebook(const NoiseCodebook& cb, const std::filesystem::path& path);
NoiseCodebook read_codebook(const std::filesystem::path& path);

}  // namespace maskedkrum
