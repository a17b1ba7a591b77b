#include "pals/stats.hpp"

#include "pals/errors.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace pals::stats {

double chi2_sf(double x, double dof) {
  if (!(dof > 0.0)) throw DomainError("chi^2 degrees of freedom must be > 0");
  if (!(x > 0.0)) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

double two_sided_sigma(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("p-value outside [0, 1]");
  if (p == 0.0) return std::numeric_limits<double>::infinity();
  if (p == 1.0) return 0.0;
  return boost::math::quantile(boost::math::complement(boost::math::normal(), 0.5 * p));
}

GofResult pearson_chi2(std::span<const std::uint64_t> counts, std::span<const double> expected,
                       double min_expected, int fitted_params) {
  if (counts.size() != expected.size() || counts.empty()) throw DomainError("pearson_chi2 size mismatch");
  std::vector<std::pair<double, double>> groups;  // observed, expected
  double o = 0.0, e = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    o += static_cast<double>(counts[k]);
    e += expected[k];
    if (e >= min_expected) {
      groups.emplace_back(o, e);
      o = e = 0.0;
    }
  }
  if (e > 0.0 || o > 0.0) {
    if (groups.empty()) {
      groups.emplace_back(o, e);
    } else {
      groups.back().first += o;
      groups.back().second += e;
    }
  }
  GofResult r;
  for (const auto& [go, ge] : groups) {
    if (ge <= 0.0) {
      if (go > 0.0) r.statistic = std::numeric_limits<double>::infinity();
      continue;
    }
    r.statistic += (go - ge) * (go - ge) / ge;
  }
  r.dof = static_cast<double>(groups.size()) - 1.0 - fitted_params;
  if (r.dof < 1.0) throw DomainError("pearson_chi2 has no degrees of freedom left");
  r.p_value = chi2_sf(r.statistic, r.dof);
  return r;
}

double ks_p_value(double d, std::size_t n) {
  if (n == 0) throw DomainError("KS test on an empty sample");
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-17) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

KsResult ks_test(std::span<const double> sample, const std::function<double(double)>& cdf) {
  std::vector<double> x(sample.begin(), sample.end());
  if (x.empty()) throw DomainError("KS test on an empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return {d, ks_p_value(d, x.size())};
}

Interval binomial_interval(std::uint64_t k, std::uint64_t n, double confidence) {
  if (n == 0) throw DomainError("binomial interval with zero trials");
  if (k > n) throw DomainError("binomial interval with k > n");
  if (!(confidence > 0.0 && confidence < 1.0)) throw DomainError("confidence must lie in (0, 1)");
  const double a = 0.5 * (1.0 - confidence);
  const double kd = static_cast<double>(k), nd = static_cast<double>(n);
  Interval r;
  r.low = k == 0 ? 0.0 : boost::math::ibeta_inv(kd, nd - kd + 1.0, a);
  r.high = k == n ? 1.0 : boost::math::ibeta_inv(kd + 1.0, nd - kd, 1.0 - a);
  return r;
}

Moments moments(std::span<const double> x) {
  if (x.size() < 2) throw DomainError("moments need at least two values");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  Moments m;
  m.mean = mean;
  m.stddev = std::sqrt(ss / (n - 1.0));
  m.mean_error = m.stddev / std::sqrt(n);
  m.stddev_error = m.stddev / std::sqrt(2.0 * (n - 1.0));
  return m;
}

}  // namespace pals::stats
