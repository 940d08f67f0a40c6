#pragma once

#include <span>
#include <string>
#include <vector>

#include "maskedkrum/core_model.hpp"

namespace maskedkrum {

enum class VarianceSource { kDeclared, kEstimated };

struct LeakageReport {
  double per_client_bound = 0.0;  // nats
  std::vector<double> per_coordinate_terms;
  double sigma = 0.0;
  VarianceSource variance_source = VarianceSource::kDeclared;
  // The bound assumes Gaussian masks; codebook rows are fixed-norm vectors
  // whose coordinates are only approximately Gaussian for large d.
  std::string caveat = "gaussian-approximation";

  double bound_bits() const;
};

// Σ_k ½·ln(1 + Var_k / σ²) in nats, summed in ascending k.
LeakageReport mi_bound(std::span<const double> variances, double sigma,
                       VarianceSource source = VarianceSource::kDeclared);

// Unbiased per-coordinate sample variance (divisor m − 1).
std::vector<double> estimate_variances(std::span<const GradientVector> samples);

inline constexpr double kMinSigma = 1e-6;

struct SigmaCalibration {
  double sigma = 0.0;
  bool unconstrained = false;  // all variances zero; sigma is kMinSigma
};

// Smallest σ with mi_bound(variances, σ) <= budget, found by bisection to a
// relative bracket width of 1e-9.
SigmaCalibration calibrate_sigma(std::span<const double> variances,
                                 double budget_nats);

}  // namespace maskedkrum
