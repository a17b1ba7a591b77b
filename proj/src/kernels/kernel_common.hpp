#pragma once

#include <cmath>
#include <cstdint>

namespace pals::kernels::detail {

inline constexpr double inv_sqrt_pi = 0.56418958354775628695;
inline constexpr double inv_sqrt2 = 0.70710678118654752440;
inline constexpr double sqrt_2pi = 2.50662827463100050242;
inline constexpr double inv_sqrt_2pi = 0.39894228040143267794;

// Both ISAs scale x by the same rounded constant so that w is bit-identical.
inline double inv_sigma_sqrt2(double sigma) { return inv_sqrt2 / sigma; }

// exp(-w^2) with the rounding error of w*w folded back in.
inline double exp_neg_square(double w) {
  const double hi = w * w;
  const double lo = std::fma(w, w, -hi);
  return std::exp(-hi) * (1.0 - lo);
}

// Philox4x32 round multipliers and Weyl key increments.
inline constexpr std::uint32_t philox_m0 = 0xD2511F53u;
inline constexpr std::uint32_t philox_m1 = 0xCD9E8D57u;
inline constexpr std::uint32_t philox_w0 = 0x9E3779B9u;
inline constexpr std::uint32_t philox_w1 = 0xBB67AE85u;

}  // namespace pals::kernels::detail
