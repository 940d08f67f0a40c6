#include "maskedkrum/core_model.hpp"

#include <cmath>
#include <string>

#include "maskedkrum/error.hpp"

namespace maskedkrum {

void require_finite(std::span<const double> values) {
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      throw Error(ErrorCode::kValidation,
                  "non-finite entry at index " + std::to_string(k));
    }
  }
}

void require_finite(const GradientVector& g, std::size_t expected_dim) {
  if (g.dim() != expected_dim) {
    throw Error(ErrorCode::kDimension,
                "gradient of client " + std::to_string(g.client_id) + " has " +
                    std::to_string(g.dim()) + " entries, expected " +
                    std::to_string(expected_dim));
  }
  require_finite(g.values);
}

double SystemConfig::noise_sigma() const {
  return std::sqrt(codebook_constant / (2.0 * static_cast<double>(dim)));
}

std::size_t SystemConfig::effective_k() const {
  if (select_k != 0) return select_k;
  return n_clients - n_byzantine - 2;
}

void SystemConfig::validate() const {
  if (n_clients < 2 * n_byzantine + 3) {
    throw Error(ErrorCode::kResilience,
                "N >= 2f+3 violated (N=" + std::to_string(n_clients) +
                    ", f=" + std::to_string(n_byzantine) + ")");
  }
  const std::size_t k = effective_k();
  if (k < 1 || k > n_clients - n_byzantine) {
    throw Error(ErrorCode::kValidation,
                "select_k must lie in [1, N-f], got " + std::to_string(k));
  }
  if (dim < n_clients) {
    throw Error(ErrorCode::kRank, "dim must be >= n_clients for the codebook");
  }
  if (!(codebook_constant > 0.0) || !std::isfinite(codebook_constant)) {
    throw Error(ErrorCode::kValidation, "codebook_constant must be > 0");
  }
  if (clip_norm && !(*clip_norm > 0.0)) {
    throw Error(ErrorCode::kValidation, "clip_norm must be > 0");
  }
}

void DistanceMatrix::validate() const {
  for (std::size_t i = 0; i < n_; ++i) {
    if ((*this)(i, i) != 0.0) {
      throw Error(ErrorCode::kValidation, "distance matrix diagonal not zero");
    }
    for (std::size_t j = 0; j < n_; ++j) {
      const double v = (*this)(i, j);
      if (!std::isfinite(v) || v < -1e-9) {
        throw Error(ErrorCode::kValidation, "invalid distance entry");
      }
      if (v != (*this)(j, i)) {
        throw Error(ErrorCode::kValidation,
                    "distance matrix not symmetric at (" + std::to_string(i) +
                        ", " + std::to_string(j) + ")");
      }
    }
  }
}

double l2_dist_sq(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimension,
                "length mismatch: " + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    sum += diff * diff;
  }
  if (!std::isfinite(sum)) {
    require_finite(a);
    require_finite(b);
  }
  return sum;
}

double l2_norm(std::span<const double> a) {
  double sum = 0.0;
  for (double v : a) sum += v * v;
  return std::sqrt(sum);
}

GradientVector clip_to_norm(const GradientVector& g, double bound) {
  if (!(bound > 0.0) || !std::isfinite(bound)) {
    throw Error(ErrorCode::kValidation, "clip bound must be positive");
  }
  require_finite(g.values);
  const double norm = l2_norm(g.values);
  if (norm <= bound) return g;
  GradientVector out{g.client_id, g.values};
  const double scale = bound / norm;
  for (double& v : out.values) v *= scale;
  return out;
}

DistanceMatrix plaintext_distances(std::span<const GradientVector> gradients) {
  DistanceMatrix dm(gradients.size());
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    for (std::size_t j = i + 1; j < gradients.size(); ++j) {
      dm.set_pair(i, j, l2_dist_sq(gradients[i].values, gradients[j].values));
    }
  }
  return dm;
}

}  // namespace maskedkrum
