// Scalar reference kernels, built on std::erfc / std::exp.

#include "pals/kernels.hpp"
#include "kernel_common.hpp"

#include <cmath>
#include <stdexcept>

namespace pals::kernels::scalar {

namespace {

// Asymptotic expansion, only used where erfc() itself underflows.
double erfcx_asymptotic(double y) {
  const double inv2y2 = 1.0 / (2.0 * y * y);
  double term = 1.0;
  double sum = 1.0;
  for (int n = 1; n < 60; ++n) {
    const double next = -term * (2.0 * n - 1.0) * inv2y2;
    if (std::abs(next) >= std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return sum * detail::inv_sqrt_pi / y;
}

}  // namespace

double erfcx(double y) {
  if (std::isnan(y)) return y;
  if (y < 0.0) {
    // exp(y^2) * (2 - erfc(-y))
    const double hi = y * y;
    const double lo = std::fma(y, y, -hi);
    return 2.0 * std::exp(hi) * (1.0 + lo) - erfcx(-y);
  }
  if (y < 26.0) {
    const double hi = y * y;
    const double lo = std::fma(y, y, -hi);
    return std::exp(hi) * (1.0 + lo) * std::erfc(y);
  }
  if (std::isinf(y)) return 0.0;
  return erfcx_asymptotic(y);
}

void erfcx(std::span<const double> y, std::span<double> out) {
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = erfcx(y[i]);
}

void gauss_edge_terms(std::span<const double> x, double sigma, std::span<double> lower,
                      std::span<double> upper, std::span<double> pdf) {
  const double k = detail::inv_sigma_sqrt2(sigma);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = -x[i] * k;
    lower[i] = 0.5 * std::erfc(w);
    upper[i] = 0.5 * std::erfc(-w);
    pdf[i] = detail::exp_neg_square(w) * detail::inv_sqrt_2pi;
  }
}

void emg_excess(std::span<const double> x, std::span<const double> pdf, double sigma,
                double lambda, std::span<double> excess) {
  const double k = detail::inv_sigma_sqrt2(sigma);
  const double shift = lambda * sigma * detail::inv_sqrt2;
  const double half_ls2 = 0.5 * lambda * sigma * sigma;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = -x[i] * k + shift;
    if (z > 0.0) {
      excess[i] = 0.5 * (pdf[i] * detail::sqrt_2pi) * erfcx(z);
    } else {
      excess[i] = 0.5 * std::exp(lambda * (half_ls2 - x[i])) * std::erfc(z);
    }
  }
}

void accumulate_normal_equations(std::span<const double> weight, std::span<const double> resid,
                                 std::span<const double> jac, std::size_t n_params,
                                 std::span<double> info, std::span<double> grad) {
  const std::size_t n = weight.size();
  if (jac.size() < n * n_params || info.size() < n_params * n_params || grad.size() < n_params)
    throw std::invalid_argument("accumulate_normal_equations: buffer too small");
  for (std::size_t p = 0; p < n_params; ++p) {
    const double* cp = jac.data() + p * n;
    double g = 0.0;
    for (std::size_t k = 0; k < n; ++k) g += resid[k] * cp[k];
    grad[p] += g;
    for (std::size_t q = p; q < n_params; ++q) {
      const double* cq = jac.data() + q * n;
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += weight[k] * cp[k] * cq[k];
      info[p * n_params + q] += s;
      if (q != p) info[q * n_params + p] += s;
    }
  }
}

void philox4x32_10(std::uint32_t key0, std::uint32_t key1, const std::array<const std::uint32_t*, 4>& ctr,
                   const std::array<std::uint32_t*, 4>& out, std::size_t n) {
  using namespace detail;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t c0 = ctr[0][i], c1 = ctr[1][i], c2 = ctr[2][i], c3 = ctr[3][i];
    std::uint32_t k0 = key0, k1 = key1;
    for (int r = 0; r < 10; ++r) {
      const std::uint64_t p0 = std::uint64_t{philox_m0} * c0;
      const std::uint64_t p1 = std::uint64_t{philox_m1} * c2;
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      c0 = hi1 ^ c1 ^ k0;
      c1 = lo1;
      c2 = hi0 ^ c3 ^ k1;
      c3 = lo0;
      k0 += philox_w0;
      k1 += philox_w1;
    }
    out[0][i] = c0;
    out[1][i] = c1;
    out[2][i] = c2;
    out[3][i] = c3;
  }
}

}  // namespace pals::kernels::scalar
