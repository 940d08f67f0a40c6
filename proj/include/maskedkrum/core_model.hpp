#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace maskedkrum {

using ClientId = std::uint32_t;

// A single client's model update.
struct GradientVector {
  ClientId client_id = 0;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

// Throws ErrorCode::kValidation if any entry is NaN or infinite.
void require_finite(std::span<const double> values);
void require_finite(const GradientVector& g, std::size_t expected_dim);

struct SystemConfig {
  std::size_t n_clients = 0;   // N
  std::size_t n_byzantine = 0; // f
  std::size_t select_k = 0;    // K; 0 means the default N - f - 2
  std::size_t dim = 0;         // d
  double codebook_constant = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> clip_norm;

  // Per-coordinate noise scale equivalent to the codebook: sqrt(C / 2d).
  double noise_sigma() const;
  std::size_t effective_k() const;

  // Checks N >= 2f+3, 1 <= K <= N-f, d >= N, C > 0 and a positive clip norm.
  void validate() const;
};

// Symmetric N x N table of squared distances, row-major.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), entries_(n * n, 0.0) {}

  std::size_t size() const { return n_; }

  double operator()(std::size_t i, std::size_t j) const {
    return entries_[i * n_ + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return entries_[i * n_ + j];
  }

  // Writes both (i, j) and (j, i).
  void set_pair(std::size_t i, std::size_t j, double value) {
    entries_[i * n_ + j] = value;
    entries_[j * n_ + i] = value;
  }

  std::span<const double> row(std::size_t i) const {
    return {entries_.data() + i * n_, n_};
  }

  const std::vector<double>& entries() const { return entries_; }

  // Throws kValidation unless the matrix is exactly symmetric, has a zero
  // diagonal and no entry below -1e-9.
  void validate() const;

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> entries_;
};

// Sum of squared differences, accumulated in ascending index order.
double l2_dist_sq(std::span<const double> a, std::span<const double> b);

double l2_norm(std::span<const double> a);

GradientVector clip_to_norm(const GradientVector& g, double bound);

// Plaintext pairwise squared distances between the given vectors.
DistanceMatrix plaintext_distances(std::span<const GradientVector> gradients);

}  // namespace maskedkrum
