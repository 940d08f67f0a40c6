#include "maskedkrum/leakage_analyzer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "maskedkrum/error.hpp"
#include "maskedkrum/noise_codebook.hpp"

namespace maskedkrum {
namespace {

TEST(MiBound, ZeroVarianceLeaksNothing) {
  const std::vector<double> v(12, 0.0);
  const auto r = mi_bound(v, 0.3);
  EXPECT_EQ(r.per_client_bound, 0.0);
  for (double t : r.per_coordinate_terms) EXPECT_EQ(t, 0.0);
}

TEST(MiBound, VarianceEqualToSigmaSquared) {
  const double sigma = 1.7;
  const std::vector<double> v(10, sigma * sigma);
  const auto r = mi_bound(v, sigma);
  EXPECT_NEAR(r.per_client_bound, 5.0 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(r.bound_bits(), 5.0, 1e-12);
  EXPECT_EQ(r.caveat, "gaussian-approximation");
}

TEST(MiBound, BoundIsSumOfTerms) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<double> v(40);
  for (double& x : v) x = u(rng);
  const auto r = mi_bound(v, 0.8);
  double sum = 0.0;
  for (double t : r.per_coordinate_terms) {
    EXPECT_GE(t, 0.0);
    sum += t;
  }
  EXPECT_NEAR(r.per_client_bound, sum, 1e-12);
}

TEST(MiBound, AdditiveOverCoordinatePartition) {
  const std::vector<double> all{0.5, 2.0, 0.0, 9.0, 1.25};
  const std::vector<double> left{0.5, 2.0}, right{0.0, 9.0, 1.25};
  EXPECT_EQ(mi_bound(all, 1.1).per_client_bound,
            mi_bound(left, 1.1).per_client_bound + mi_bound(right, 1.1).per_client_bound);
}

TEST(MiBound, Errors) {
  EXPECT_THROW(mi_bound(std::vector<double>{1.0, -0.1}, 1.0), Error);
  EXPECT_THROW(mi_bound(std::vector<double>{1.0}, 0.0), Error);
}

TEST(MiBound, EmpiricalVariancesTrackClosedForm) {
  // Coordinate k is uniform on [-a_k, a_k], variance a_k² / 3.
  std::mt19937_64 rng(77);
  const std::vector<double> half_width{0.5, 1.0, 2.0, 3.0};
  std::vector<GradientVector> samples(10000);
  for (auto& s : samples) {
    for (double a : half_width) s.values.push_back(std::uniform_real_distribution<double>(-a, a)(rng));
  }
  std::vector<double> analytic;
  for (double a : half_width) analytic.push_back(a * a / 3.0);
  const double truth = mi_bound(analytic, 1.0).per_client_bound;
  const auto est = mi_bound(estimate_variances(samples), 1.0, VarianceSource::kEstimated);
  EXPECT_NEAR(est.per_client_bound, truth, 0.02 * truth);
  EXPECT_EQ(est.variance_source, VarianceSource::kEstimated);
}

TEST(EstimateVariances, Examples) {
  const std::vector<GradientVector> two{{1, {0.0}}, {2, {2.0}}};
  EXPECT_EQ(estimate_variances(two), (std::vector<double>{2.0}));
  const std::vector<GradientVector> same(5, GradientVector{1, {3.0, -1.0}});
  EXPECT_EQ(estimate_variances(same), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(estimate_variances(std::vector<GradientVector>{{1, {1.0}}}), Error);
}

TEST(EstimateVariances, KnownGenerator) {
  std::mt19937_64 rng(3);
  const std::vector<double> stddev{0.1, 1.0, 4.0};
  std::vector<GradientVector> samples(10000);
  for (auto& s : samples) {
    for (double sd : stddev) s.values.push_back(std::normal_distribution<double>(2.0, sd)(rng));
  }
  const auto v = estimate_variances(samples);
  for (std::size_t k = 0; k < stddev.size(); ++k) {
    const double truth = stddev[k] * stddev[k];
    EXPECT_NEAR(v[k], truth, 0.05 * truth);
  }
}

TEST(CalibrateSigma, ClosedFormCases) {
  const std::vector<double> one{1.0};
  EXPECT_NEAR(calibrate_sigma(one, 0.5 * std::numbers::ln2).sigma, 1.0, 1e-8);
  EXPECT_NEAR(calibrate_sigma(one, 0.5 * std::log(1.25)).sigma, 2.0, 2e-8);
}

TEST(CalibrateSigma, UniformVarianceClosedForm) {
  const double v = 3.5, eps = 0.7;
  const std::vector<double> vars(20, v);
  const double expected = std::sqrt(v / (std::exp(2 * eps / 20) - 1));
  EXPECT_NEAR(calibrate_sigma(vars, eps).sigma, expected, 1e-8 * expected);
}

TEST(CalibrateSigma, BracketsTheBudget) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> vars(1 + trial);
    for (double& x : vars) x = u(rng);
    const double eps = 0.01 + 0.2 * trial;
    const double sigma = calibrate_sigma(vars, eps).sigma;
    EXPECT_LE(mi_bound(vars, sigma).per_client_bound, eps);
    EXPECT_GT(mi_bound(vars, sigma * (1 - 1e-6)).per_client_bound, eps);
  }
}

TEST(CalibrateSigma, AllZeroVariances) {
  const auto cal = calibrate_sigma(std::vector<double>(3, 0.0), 0.1);
  EXPECT_TRUE(cal.unconstrained);
  EXPECT_EQ(cal.sigma, kMinSigma);
  EXPECT_THROW(calibrate_sigma(std::vector<double>{1.0}, 0.0), Error);
}

TEST(MiBoundProperty, StrictlyDecreasingInSigma) {
  const std::vector<double> vars{0.0, 0.3, 2.0};
  double prev = INFINITY;
  for (int i = 1; i <= 100; ++i) {
    const double b = mi_bound(vars, 0.05 * i).per_client_bound;
    EXPECT_LT(b, prev);
    prev = b;
  }
}

TEST(MiBoundProperty, CodebookSigmaFeedsTheReport) {
  const auto cb = build_codebook(4, 64, 8.0, 1);
  const double sigma = equivalent_sigma(cb);
  EXPECT_DOUBLE_EQ(sigma, 0.25);
  const auto r = mi_bound(std::vector<double>(64, 0.0625), sigma);
  EXPECT_NEAR(r.per_client_bound, 32 * std::numbers::ln2, 1e-12);
}

}  // namespace
}  // namespace maskedkrum
