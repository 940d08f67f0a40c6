#include "maskedkrum/noise_codebook.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "maskedkrum/byte_io.hpp"
#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += a[k] * b[k];
  return sum;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Orthonormalizes the rows of `block` in place. Returns false if some row's
// residual falls below kDegenerateResidual relative to its original norm.
bool orthonormalize_rows(std::span<double> block, std::size_t n,
                         std::size_t dim) {
  auto row = [&](std::size_t i) { return block.subspan(i * dim, dim); };
  for (std::size_t i = 0; i < n; ++i) {
    auto v = row(i);
    const double original = norm(v);
    if (!(original > 0.0)) return false;
    // Two sweeps: the second one removes the components the first one left
    // behind through cancellation.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        auto q = row(j);
        const double proj = dot(q, v);
        for (std::size_t k = 0; k < dim; ++k) v[k] -= proj * q[k];
      }
    }
    const double residual = norm(v);
    if (!(residual >= kDegenerateResidual * original)) return false;
    for (double& x : v) x /= residual;
  }
  return true;
}

}  // namespace

namespace detail {

NoiseCodebook build_codebook_from(std::size_t n, std::size_t dim,
                                  double constant, std::uint64_t seed,
                                  const DrawBlock& fill) {
  if (dim < n) {
    throw Error(ErrorCode::kRank,
                "cannot orthogonalize " + std::to_string(n) +
                    " vectors in fewer than " + std::to_string(n) +
                    " dimensions (dim=" + std::to_string(dim) + ")");
  }
  if (!(constant > 0.0) || !std::isfinite(constant)) {
    throw Error(ErrorCode::kValidation, "codebook constant must be > 0");
  }

  NoiseCodebook cb{n, dim, constant, seed, std::vector<double>(n * dim)};
  const double target_norm = std::sqrt(constant / 2.0);
  for (int attempt = 0; attempt <= kCodebookRetries; ++attempt) {
    fill(cb.vectors);
    if (!orthonormalize_rows(cb.vectors, n, dim)) continue;
    for (std::size_t i = 0; i < n; ++i) {
      auto r = cb.row(i);
      const double scale = target_norm / norm(r);
      for (double& x : r) x *= scale;
    }
    return cb;
  }
  throw Error(ErrorCode::kDegenerate,
              "Gram-Schmidt residual collapsed after " +
                  std::to_string(kCodebookRetries) + " retries");
}

}  // namespace detail

NoiseCodebook build_codebook(std::size_t n, std::size_t dim, double constant,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  return detail::build_codebook_from(n, dim, constant, seed,
                                     [&](std::span<double> block) {
                                       for (double& x : block) x = gauss(rng);
                                     });
}

CodebookReport verify_codebook(const NoiseCodebook& cb) {
  CodebookReport report;
  report.tolerance = kCodebookRelTolerance * cb.constant;
  const double half = cb.constant / 2.0;
  for (std::size_t i = 0; i < cb.n; ++i) {
    const auto ri = cb.row(i);
    report.max_norm_deviation =
        std::max(report.max_norm_deviation, std::abs(dot(ri, ri) - half));
    for (std::size_t j = i + 1; j < cb.n; ++j) {
      const auto rj = cb.row(j);
      double dist = 0.0;
      for (std::size_t k = 0; k < cb.dim; ++k) {
        const double diff = ri[k] - rj[k];
        dist += diff * diff;
      }
      report.max_pair_deviation =
          std::max(report.max_pair_deviation, std::abs(dist - cb.constant));
      report.max_abs_dot = std::max(report.max_abs_dot, std::abs(dot(ri, rj)));
      ++report.pairs_checked;
    }
  }
  report.pass = report.max_pair_deviation <= report.tolerance &&
                report.max_norm_deviation <= report.tolerance &&
                report.max_abs_dot <= report.tolerance;
  return report;
}

double equivalent_sigma(const NoiseCodebook& cb) {
  return std::sqrt(cb.constant / (2.0 * static_cast<double>(cb.dim)));
}

std::vector<std::uint8_t> encode_codebook(const NoiseCodebook& cb) {
  byte_io::Writer w;
  w.buffer().reserve(kCodebookHeaderSize + cb.vectors.size() * 8);
  for (char c : kCodebookMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCodebookVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(cb.n));
  w.u32(static_cast<std::uint32_t>(cb.dim));
  w.f64(cb.constant);
  w.u64(cb.seed);
  w.f64s(cb.vectors);
  return w.take();
}

namespace {

NoiseCodebook read_header(byte_io::Reader& r) {
  for (char c : kCodebookMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) {
      throw Error(ErrorCode::kFormat, "bad codebook magic");
    }
  }
  if (const auto version = r.u16(); version != kCodebookVersion) {
    throw Error(ErrorCode::kFormat,
                "unsupported codebook version " + std::to_string(version));
  }
  r.u16();
  NoiseCodebook cb;
  cb.n = r.u32();
  cb.dim = r.u32();
  cb.constant = r.f64();
  cb.seed = r.u64();
  return cb;
}

}  // namespace

NoiseCodebook decode_codebook_header(std::span<const std::uint8_t> bytes) {
  byte_io::Reader r(bytes);
  return read_header(r);
}

NoiseCodebook decode_codebook(std::span<const std::uint8_t> bytes) {
  byte_io::Reader r(bytes);
  NoiseCodebook cb = read_header(r);
  if (r.remaining() != cb.n * cb.dim * 8) {
    throw Error(ErrorCode::kFormat, "codebook payload size mismatch");
  }
  cb.vectors = r.f64s(cb.n * cb.dim);
  return cb;
}

void write_codebook(const NoiseCodebook& cb, const std::filesystem::path& path) {
  byte_io::write_file(path, encode_codebook(cb));
}

NoiseCodebook read_codebook(const std::filesystem::path& path) {
  return decode_codebook(byte_io::read_file(path));
}

}  // namespace maskedkrum
