#include "maskedkrum/leakage_analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

double bound_value(std::span<const double> variances, double sigma) {
  const double s2 = sigma * sigma;
  double sum = 0.0;
  for (double v : variances) sum += 0.5 * std::log1p(v / s2);
  return sum;
}

void check_variances(std::span<const double> variances) {
  for (double v : variances) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kValidation, "variances must be finite and >= 0");
    }
  }
}

}  // namespace

double LeakageReport::bound_bits() const {
  return per_client_bound / std::numbers::ln2;
}

LeakageReport mi_bound(std::span<const double> variances, double sigma,
                       VarianceSource source) {
  check_variances(variances);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorCode::kValidation, "sigma must be > 0");
  }
  LeakageReport report;
  report.sigma = sigma;
  report.variance_source = source;
  report.per_coordinate_terms.reserve(variances.size());
  const double s2 = sigma * sigma;
  for (double v : variances) {
    const double term = 0.5 * std::log1p(v / s2);
    report.per_coordinate_terms.push_back(term);
    report.per_client_bound += term;
  }
  return report;
}

std::vector<double> estimate_variances(std::span<const GradientVector> samples) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::kValidation,
                "variance estimate needs at least 2 samples");
  }
  const std::size_t dim = samples.front().dim();
  std::vector<double> mean(dim, 0.0);
  for (const auto& s : samples) {
    if (s.dim() != dim) {
      throw Error(ErrorCode::kDimension, "samples differ in length");
    }
    for (std::size_t k = 0; k < dim; ++k) mean[k] += s.values[k];
  }
  const double m = static_cast<double>(samples.size());
  for (double& v : mean) v /= m;

  std::vector<double> var(dim, 0.0);
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = s.values[k] - mean[k];
      var[k] += diff * diff;
    }
  }
  for (double& v : var) v /= (m - 1.0);
  return var;
}

SigmaCalibration calibrate_sigma(std::span<const double> variances,
                                 double budget_nats) {
  check_variances(variances);
  if (!(budget_nats > 0.0) || !std::isfinite(budget_nats)) {
    throw Error(ErrorCode::kValidation, "leakage budget must be > 0");
  }
  bool any_positive = false;
  double max_var = 0.0;
  for (double v : variances) {
    any_positive = any_positive || v > 0.0;
    max_var = std::max(max_var, v);
  }
  if (!any_positive) return {kMinSigma, true};

  // bound(σ) is strictly decreasing; bracket the crossing then bisect.
  double hi = std::sqrt(max_var);
  while (bound_value(variances, hi) > budget_nats) hi *= 2.0;
  double lo = hi / 2.0;
  while (lo > kMinSigma && bound_value(variances, lo) <= budget_nats) lo /= 2.0;
  if (bound_value(variances, lo) <= budget_nats) return {lo, false};

  while ((hi - lo) > 1e-9 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (bound_value(variances, mid) <= budget_nats) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return {hi, false};
}

}  // namespace maskedkrum
