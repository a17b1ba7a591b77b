// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; it is reached through the dispatch table only after CPUID
// confirms both extensions.
//
// exp() is a Cody-Waite reduction with a degree-13 Taylor polynomial,
// erfcx() uses W. J. Cody's rational approximations (CALERF), blended over
// its three argument ranges.

#include "pals/kernels.hpp"
#include "kernel_common.hpp"

#include <immintrin.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <stdexcept>

namespace pals::kernels::avx2 {

namespace {

using detail::inv_sqrt_2pi;
using detail::inv_sqrt_pi;
using detail::sqrt_2pi;

inline __m256d set1(double v) { return _mm256_set1_pd(v); }

inline __m256d abs_pd(__m256d v) {
  return _mm256_andnot_pd(set1(-0.0), v);
}

inline __m256d exp_pd(__m256d x) {
  const __m256d lo_limit = set1(-708.3);
  const __m256d hi_limit = set1(709.7);
  const __m256d xc = _mm256_min_pd(_mm256_max_pd(x, lo_limit), hi_limit);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, set1(1.4426950408889634074)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, set1(6.93145751953125E-1), xc);
  r = _mm256_fnmadd_pd(n, set1(1.42860682030941723212E-6), r);

  __m256d p = set1(1.0 / 6227020800.0);
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, set1(0.5));
  p = _mm256_fmadd_pd(p, r, set1(1.0));
  p = _mm256_fmadd_pd(p, r, set1(1.0));

  // 2^n via the exponent field; n is an exact small integer in double form.
  const __m256d magic = set1(6755399441055744.0);
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                      _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  __m256d result = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));

  result = _mm256_blendv_pd(result, _mm256_setzero_pd(), _mm256_cmp_pd(x, lo_limit, _CMP_LT_OQ));
  result = _mm256_blendv_pd(result, set1(HUGE_VAL), _mm256_cmp_pd(x, hi_limit, _CMP_GT_OQ));
  return result;
}

inline __m256d exp_neg_square_pd(__m256d w) {
  const __m256d hi = _mm256_mul_pd(w, w);
  const __m256d lo = _mm256_fmsub_pd(w, w, hi);
  return _mm256_mul_pd(exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), hi)),
                       _mm256_sub_pd(set1(1.0), lo));
}

constexpr double kThresh = 0.46875;

constexpr std::array<double, 5> kA = {3.16112374387056560E00, 1.13864154151050156E02,
                                      3.77485237685302021E02, 3.20937758913846947E03,
                                      1.85777706184603153E-1};
constexpr std::array<double, 4> kB = {2.36012909523441209E01, 2.44024637934444173E02,
                                      1.28261652607737228E03, 2.84423683343917062E03};
constexpr std::array<double, 9> kC = {
    5.64188496988670089E-1, 8.88314979438837594E00, 6.61191906371416295E01,
    2.98635138197400131E02, 8.81952221241769090E02, 1.71204761263407058E03,
    2.05107837782607147E03, 1.23033935479799725E03, 2.15311535474403846E-8};
constexpr std::array<double, 8> kD = {
    1.57449261107098347E01, 1.17693950891312499E02, 5.37181101862009858E02,
    1.62138957456669019E03, 3.29079923573345963E03, 4.36261909014324716E03,
    3.43936767414372164E03, 1.23033935480374942E03};
constexpr std::array<double, 6> kP = {3.05326634961232344E-1, 3.60344899949804439E-1,
                                      1.25781726111229246E-1, 1.60837851487422766E-2,
                                      6.58749161529837803E-4, 1.63153871373020978E-2};
constexpr std::array<double, 5> kQ = {2.56852019228982242E00, 1.87295284992346725E00,
                                      5.27905102951428412E-1, 6.05183413124413191E-2,
                                      2.33520497626869185E-3};

// erfcx for y >= 0.
inline __m256d erfcx_pos_pd(__m256d y) {
  const __m256d one = set1(1.0);

  // |y| <= 0.46875: erf rational, then exp(y^2) (1 - erf)
  const __m256d y1 = _mm256_min_pd(y, set1(kThresh));
  const __m256d ysq1 = _mm256_mul_pd(y1, y1);
  __m256d num = _mm256_mul_pd(set1(kA[4]), ysq1);
  __m256d den = ysq1;
  for (int i = 0; i < 3; ++i) {
    num = _mm256_mul_pd(_mm256_add_pd(num, set1(kA[i])), ysq1);
    den = _mm256_mul_pd(_mm256_add_pd(den, set1(kB[i])), ysq1);
  }
  const __m256d erf1 = _mm256_div_pd(_mm256_mul_pd(y1, _mm256_add_pd(num, set1(kA[3]))),
                                     _mm256_add_pd(den, set1(kB[3])));
  const __m256d r1 = _mm256_mul_pd(exp_pd(ysq1), _mm256_sub_pd(one, erf1));

  // 0.46875 < y <= 4
  const __m256d y2 = _mm256_min_pd(_mm256_max_pd(y, set1(kThresh)), set1(4.0));
  num = _mm256_mul_pd(set1(kC[8]), y2);
  den = y2;
  for (int i = 0; i < 7; ++i) {
    num = _mm256_mul_pd(_mm256_add_pd(num, set1(kC[i])), y2);
    den = _mm256_mul_pd(_mm256_add_pd(den, set1(kD[i])), y2);
  }
  const __m256d r2 = _mm256_div_pd(_mm256_add_pd(num, set1(kC[7])), _mm256_add_pd(den, set1(kD[7])));

  // y > 4
  const __m256d y3 = _mm256_max_pd(y, set1(4.0));
  const __m256d ysq3 = _mm256_div_pd(one, _mm256_mul_pd(y3, y3));
  num = _mm256_mul_pd(set1(kP[5]), ysq3);
  den = ysq3;
  for (int i = 0; i < 4; ++i) {
    num = _mm256_mul_pd(_mm256_add_pd(num, set1(kP[i])), ysq3);
    den = _mm256_mul_pd(_mm256_add_pd(den, set1(kQ[i])), ysq3);
  }
  const __m256d tail = _mm256_div_pd(_mm256_mul_pd(ysq3, _mm256_add_pd(num, set1(kP[4]))),
                                     _mm256_add_pd(den, set1(kQ[4])));
  const __m256d r3 = _mm256_div_pd(_mm256_sub_pd(set1(inv_sqrt_pi), tail), y3);

  __m256d r = _mm256_blendv_pd(r2, r1, _mm256_cmp_pd(y, set1(kThresh), _CMP_LE_OQ));
  r = _mm256_blendv_pd(r, r3, _mm256_cmp_pd(y, set1(4.0), _CMP_GT_OQ));
  return r;
}

// Runs `body` over blocks of 4, padding the last partial block through a
// stack buffer so every element goes through the same vector arithmetic.
template <std::size_t NIn, std::size_t NOut, typename Body>
void for_each_block(std::size_t n, const std::array<const double*, NIn>& in,
                    const std::array<double*, NOut>& out, Body&& body) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    std::array<__m256d, NIn> vin;
    for (std::size_t a = 0; a < NIn; ++a) vin[a] = _mm256_loadu_pd(in[a] + i);
    std::array<__m256d, NOut> vout = body(vin);
    for (std::size_t a = 0; a < NOut; ++a) _mm256_storeu_pd(out[a] + i, vout[a]);
  }
  if (i < n) {
    const std::size_t rem = n - i;
    alignas(32) double buf_in[NIn][4] = {};
    alignas(32) double buf_out[NOut][4];
    std::array<__m256d, NIn> vin;
    for (std::size_t a = 0; a < NIn; ++a) {
      std::memcpy(buf_in[a], in[a] + i, rem * sizeof(double));
      vin[a] = _mm256_load_pd(buf_in[a]);
    }
    std::array<__m256d, NOut> vout = body(vin);
    for (std::size_t a = 0; a < NOut; ++a) {
      _mm256_store_pd(buf_out[a], vout[a]);
      std::memcpy(out[a] + i, buf_out[a], rem * sizeof(double));
    }
  }
}

}  // namespace

void erfcx(std::span<const double> y, std::span<double> out) {
  for_each_block<1, 1>(y.size(), {y.data()}, {out.data()},
                       [](const std::array<__m256d, 1>& v) {
                         return std::array<__m256d, 1>{erfcx_pos_pd(v[0])};
                       });
}

void gauss_edge_terms(std::span<const double> x, double sigma, std::span<double> lower,
                      std::span<double> upper, std::span<double> pdf) {
  const __m256d k = set1(detail::inv_sigma_sqrt2(sigma));
  for_each_block<1, 3>(
      x.size(), {x.data()}, {lower.data(), upper.data(), pdf.data()},
      [&](const std::array<__m256d, 1>& v) {
        const __m256d w = _mm256_mul_pd(_mm256_sub_pd(_mm256_setzero_pd(), v[0]), k);
        const __m256d aw = abs_pd(w);
        const __m256d ew = exp_neg_square_pd(aw);
        const __m256d h = _mm256_mul_pd(set1(0.5), _mm256_mul_pd(ew, erfcx_pos_pd(aw)));
        const __m256d h_c = _mm256_sub_pd(set1(1.0), h);
        const __m256d w_pos = _mm256_cmp_pd(w, _mm256_setzero_pd(), _CMP_GE_OQ);
        return std::array<__m256d, 3>{_mm256_blendv_pd(h_c, h, w_pos),
                                      _mm256_blendv_pd(h, h_c, w_pos),
                                      _mm256_mul_pd(ew, set1(inv_sqrt_2pi))};
      });
}

void emg_excess(std::span<const double> x, std::span<const double> pdf, double sigma,
                double lambda, std::span<double> excess) {
  const __m256d k = set1(detail::inv_sigma_sqrt2(sigma));
  const __m256d shift = set1(lambda * sigma * detail::inv_sqrt2);
  const __m256d half_ls2 = set1(0.5 * lambda * sigma * sigma);
  const __m256d lam = set1(lambda);
  for_each_block<2, 1>(
      x.size(), {x.data(), pdf.data()}, {excess.data()},
      [&](const std::array<__m256d, 2>& v) {
        const __m256d z =
            _mm256_add_pd(_mm256_mul_pd(_mm256_sub_pd(_mm256_setzero_pd(), v[0]), k), shift);
        const __m256d az = abs_pd(z);
        const __m256d ez = erfcx_pos_pd(az);
        // z > 0: 0.5 exp(-w^2) erfcx(z)
        const __m256d e_pos = _mm256_mul_pd(set1(0.5), _mm256_mul_pd(_mm256_mul_pd(v[1], set1(sqrt_2pi)), ez));
        // z <= 0: 0.5 exp(A) (2 - erfc(|z|))
        const __m256d erfc_neg = _mm256_sub_pd(set1(2.0), _mm256_mul_pd(exp_neg_square_pd(az), ez));
        const __m256d a = _mm256_mul_pd(lam, _mm256_sub_pd(half_ls2, v[0]));
        const __m256d e_neg = _mm256_mul_pd(set1(0.5), _mm256_mul_pd(exp_pd(a), erfc_neg));
        return std::array<__m256d, 1>{
            _mm256_blendv_pd(e_neg, e_pos, _mm256_cmp_pd(z, _mm256_setzero_pd(), _CMP_GT_OQ))};
      });
}

void accumulate_normal_equations(std::span<const double> weight, std::span<const double> resid,
                                 std::span<const double> jac, std::size_t n_params,
                                 std::span<double> info, std::span<double> grad) {
  const std::size_t n = weight.size();
  if (jac.size() < n * n_params || info.size() < n_params * n_params || grad.size() < n_params)
    throw std::invalid_argument("accumulate_normal_equations: buffer too small");
  const double* w = weight.data();
  const double* r = resid.data();
  auto hsum = [](__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
  };
  for (std::size_t p = 0; p < n_params; ++p) {
    const double* cp = jac.data() + p * n;
    {
      __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
      std::size_t k = 0;
      for (; k + 8 <= n; k += 8) {
        a0 = _mm256_fmadd_pd(_mm256_loadu_pd(r + k), _mm256_loadu_pd(cp + k), a0);
        a1 = _mm256_fmadd_pd(_mm256_loadu_pd(r + k + 4), _mm256_loadu_pd(cp + k + 4), a1);
      }
      double g = hsum(_mm256_add_pd(a0, a1));
      for (; k < n; ++k) g += r[k] * cp[k];
      grad[p] += g;
    }
    for (std::size_t q = p; q < n_params; ++q) {
      const double* cq = jac.data() + q * n;
      __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
      std::size_t k = 0;
      for (; k + 8 <= n; k += 8) {
        a0 = _mm256_fmadd_pd(_mm256_mul_pd(_mm256_loadu_pd(w + k), _mm256_loadu_pd(cp + k)),
                             _mm256_loadu_pd(cq + k), a0);
        a1 = _mm256_fmadd_pd(_mm256_mul_pd(_mm256_loadu_pd(w + k + 4), _mm256_loadu_pd(cp + k + 4)),
                             _mm256_loadu_pd(cq + k + 4), a1);
      }
      double s = hsum(_mm256_add_pd(a0, a1));
      for (; k < n; ++k) s += w[k] * cp[k] * cq[k];
      info[p * n_params + q] += s;
      if (q != p) info[q * n_params + p] += s;
    }
  }
}

namespace {

// 32x32 -> 64-bit products of all eight lanes, split into high and low words.
inline void mulhilo(__m256i a, __m256i m, __m256i& hi, __m256i& lo) {
  const __m256i even = _mm256_mul_epu32(a, m);
  const __m256i odd = _mm256_mul_epu32(_mm256_srli_epi64(a, 32), m);
  lo = _mm256_blend_epi32(even, _mm256_slli_epi64(odd, 32), 0xAA);
  hi = _mm256_blend_epi32(_mm256_srli_epi64(even, 32), odd, 0xAA);
}

}  // namespace

void philox4x32_10(std::uint32_t key0, std::uint32_t key1, const std::array<const std::uint32_t*, 4>& ctr,
                   const std::array<std::uint32_t*, 4>& out, std::size_t n) {
  using namespace detail;
  const __m256i m0 = _mm256_set1_epi32(static_cast<int>(philox_m0));
  const __m256i m1 = _mm256_set1_epi32(static_cast<int>(philox_m1));
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256i c0 = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(ctr[0] + i));
    __m256i c1 = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(ctr[1] + i));
    __m256i c2 = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(ctr[2] + i));
    __m256i c3 = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(ctr[3] + i));
    std::uint32_t k0 = key0, k1 = key1;
    for (int r = 0; r < 10; ++r) {
      __m256i hi0, lo0, hi1, lo1;
      mulhilo(c0, m0, hi0, lo0);
      mulhilo(c2, m1, hi1, lo1);
      c0 = _mm256_xor_si256(_mm256_xor_si256(hi1, c1), _mm256_set1_epi32(static_cast<int>(k0)));
      c1 = lo1;
      c2 = _mm256_xor_si256(_mm256_xor_si256(hi0, c3), _mm256_set1_epi32(static_cast<int>(k1)));
      c3 = lo0;
      k0 += philox_w0;
      k1 += philox_w1;
    }
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out[0] + i), c0);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out[1] + i), c1);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out[2] + i), c2);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out[3] + i), c3);
  }
  if (i < n) {
    const std::array<const std::uint32_t*, 4> tail_in{ctr[0] + i, ctr[1] + i, ctr[2] + i, ctr[3] + i};
    const std::array<std::uint32_t*, 4> tail_out{out[0] + i, out[1] + i, out[2] + i, out[3] + i};
    scalar::philox4x32_10(key0, key1, tail_in, tail_out, n - i);
  }
}

}  // namespace pals::kernels::avx2
