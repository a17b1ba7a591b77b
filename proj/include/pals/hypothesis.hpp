#pragma once
// Likelihood-ratio tests for the two anomaly signatures and Monte Carlo
// power scans over the number of recorded events.

#include "pals/fit.hpp"
#include "pals/spectrometer.hpp"
#include "pals/stats.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pals {

struct TestResult {
  std::string null_hypothesis;
  /// Deviance difference, constrained minus free (>= 0).
  double statistic = 0.0;
  double p_value = 1.0;
  /// Level the decision is taken at.
  double significance = 0.05;
  bool reject = false;
  /// Gaussian-equivalent significance; sqrt(statistic) for one degree of freedom.
  double effective_sigma = 0.0;
  double dof = 1.0;
  /// false when a fit did not converge; the decision is then "fail to reject".
  bool valid = true;
  std::string message;
  double deviance_null = 0.0;
  double deviance_alt = 0.0;
  std::vector<FitResult> null_fits;
  std::vector<FitResult> alt_fits;
};

/// Copy of `tmpl` whose initial total_events and background are taken from
/// the histogram.
FitSpec adapt_spec(const FitSpec& tmpl, const Histogram& h);

/// Null: the o-Ps intensity I_2 is common to both orientations (joint fit).
/// Alternative: independent I_2 per orientation. chi^2 with one degree of freedom.
TestResult lr_test_doubling(const Histogram& h_perp, const Histogram& h_par, const FitSpec& spec,
                            double significance = 0.05);

/// Null: rate_2 == lambda_null (1/us). Alternative: rate_2 free.
TestResult lr_test_rate_shift(const Histogram& h, double lambda_null, const FitSpec& spec,
                              double significance = 0.05);

/// Fitted I_2(parallel) / I_2(perpendicular) from the alternative fits of a
/// doubling test, with first-order error.
struct Ratio {
  double value = 0.0;
  double error = 0.0;
};
Ratio doubling_ratio(const TestResult& r);

enum class PowerTest { doubling, rate_shift };
std::string to_string(PowerTest t);
/// Throws ConfigError on an unknown name.
PowerTest parse_power_test(const std::string& s);

struct PowerScanSpec {
  PowerTest test = PowerTest::rate_shift;
  SpectrometerConfig cfg;
  SpectrumModel base = default_neon_model();
  /// Alternative scenario. For the doubling test the perpendicular and
  /// parallel orientations are simulated from it; for the rate-shift test its
  /// field_orientation is used as given and lambda_null is base rate_2.
  AnomalyScenario scenario;
  /// Expected accepted true events per histogram; live time is scaled to match.
  std::vector<double> grid;
  std::size_t replicas = 100;
  /// A replica rejects when p < alpha.
  double alpha = 0.05;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

struct PowerPoint {
  double n_events = 0.0;
  std::size_t replicas = 0;
  std::size_t rejections = 0;
  std::size_t invalid = 0;
  double power = 0.0;
  stats::Interval ci;
  double median_sigma = 0.0;
  std::vector<double> p_values;
  std::vector<double> sigmas;
};

struct PowerCurve {
  PowerTest test = PowerTest::rate_shift;
  double alpha = 0.05;
  std::vector<PowerPoint> points;

  /// Smallest grid point whose power reaches `level`.
  std::optional<std::size_t> first_reaching(double level) const;
};

/// Throws DomainError for zero replicas, a non-increasing grid or alpha
/// outside (0, 1). N == 0 reports power == alpha without simulating.
PowerCurve power_scan(const PowerScanSpec& spec);

/// Live time giving `n_events` expected accepted true events.
double live_time_for_events(const SpectrometerConfig& cfg, const AnomalyScenario& s, const SpectrumModel& base,
                            double n_events);

}  // namespace pals
