#pragma once
// Reference distributions and goodness-of-fit tests.

#include <cstdint>
#include <functional>
#include <span>

namespace pals::stats {

/// Upper tail P(X >= x) for X ~ chi^2(dof).
double chi2_sf(double x, double dof);
/// Upper tail of the standard normal.
double normal_sf(double z);
/// z with P(|Z| >= z) = p. Returns +inf for p == 0.
double two_sided_sigma(double p);

struct GofResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Pearson chi^2 of counts against expectations. Adjacent bins are pooled
/// until each pooled expectation reaches min_expected; the last group joins
/// its predecessor if it falls short. dof = groups - 1 - fitted_params.
GofResult pearson_chi2(std::span<const std::uint64_t> counts, std::span<const double> expected,
                       double min_expected = 5.0, int fitted_params = 0);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
KsResult ks_test(std::span<const double> sample, const std::function<double(double)>& cdf);
/// Asymptotic Kolmogorov distribution tail with Stephens' small-n correction.
double ks_p_value(double d, std::size_t n);

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Clopper-Pearson interval for k successes out of n at the given confidence.
Interval binomial_interval(std::uint64_t k, std::uint64_t n, double confidence = 0.95);

struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
  /// Standard errors of mean and stddev for a normal sample.
  double mean_error = 0.0;
  double stddev_error = 0.0;
};
Moments moments(std::span<const double> x);

}  // namespace pals::stats
