#pragma once
// Data-parallel inner loops of the spectrum model and the fitter.
//
// Every kernel has a scalar reference implementation built from the C++
// standard library and, on x86-64, an AVX2+FMA variant built from its own
// polynomial/rational approximations. The variant in use is chosen once at
// startup from CPUID and can be forced with select_isa() (tests compare the
// two paths element by element).

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace pals::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
// Throws std::invalid_argument if the ISA is not supported on this CPU/build.
void select_isa(Isa isa);
// Best supported ISA for this process.
Isa detect_isa();

/// Scaled complementary error function erfcx(y) = exp(y^2) erfc(y), for y >= 0.
void erfcx(std::span<const double> y, std::span<double> out);

/// Standard-normal terms at channel edges. For each x (time relative to t0)
/// with w = -x / (sigma*sqrt2):
///   lower = Phi(x/sigma), upper = 1 - Phi(x/sigma), pdf = phi(x/sigma).
/// Both tails are computed directly, never as 1 - (other tail).
void gauss_edge_terms(std::span<const double> x, double sigma, std::span<double> lower,
                      std::span<double> upper, std::span<double> pdf);

/// Exponential-excess term of the exponentially modified Gaussian:
///   E(x) = exp(-lambda*x + lambda^2 sigma^2 / 2) * Phi(x/sigma - lambda*sigma)
/// evaluated without overflow (scaled erfc). `pdf` must hold phi(x/sigma) as
/// produced by gauss_edge_terms. The EMG density is lambda*E and its CDF is
/// Phi(x/sigma) - E. Requires sigma > 0, lambda >= 0.
void emg_excess(std::span<const double> x, std::span<const double> pdf, double sigma,
                double lambda, std::span<double> excess);

/// Weighted normal equations over column-major Jacobian columns:
///   info[p*n + q] += sum_k weight[k] * col_p[k] * col_q[k]   (p <= q, mirrored)
///   grad[p]       += sum_k resid[k] * col_p[k]
/// `jac` holds n_params columns of length weight.size(), column p at
/// jac[p * weight.size()].
void accumulate_normal_equations(std::span<const double> weight, std::span<const double> resid,
                                 std::span<const double> jac, std::size_t n_params,
                                 std::span<double> info, std::span<double> grad);

/// Philox4x32-10 over n counters stored as structure of arrays: word w of
/// counter i is ctr[w][i], the result goes to out[w][i]. Integer-exact, so
/// every ISA produces identical bits.
void philox4x32_10(std::uint32_t key0, std::uint32_t key1, const std::array<const std::uint32_t*, 4>& ctr,
                   const std::array<std::uint32_t*, 4>& out, std::size_t n);

// Individual implementations, exposed for equivalence tests.
namespace scalar {
double erfcx(double y);
void erfcx(std::span<const double> y, std::span<double> out);
void gauss_edge_terms(std::span<const double> x, double sigma, std::span<double> lower,
                      std::span<double> upper, std::span<double> pdf);
void emg_excess(std::span<const double> x, std::span<const double> pdf, double sigma,
                double lambda, std::span<double> excess);
void accumulate_normal_equations(std::span<const double> weight, std::span<const double> resid,
                                 std::span<const double> jac, std::size_t n_params,
                                 std::span<double> info, std::span<double> grad);
void philox4x32_10(std::uint32_t key0, std::uint32_t key1, const std::array<const std::uint32_t*, 4>& ctr,
                   const std::array<std::uint32_t*, 4>& out, std::size_t n);
}  // namespace scalar

namespace avx2 {
void erfcx(std::span<const double> y, std::span<double> out);
void gauss_edge_terms(std::span<const double> x, double sigma, std::span<double> lower,
                      std::span<double> upper, std::span<double> pdf);
void emg_excess(std::span<const double> x, std::span<const double> pdf, double sigma,
                double lambda, std::span<double> excess);
void accumulate_normal_equations(std::span<const double> weight, std::span<const double> resid,
                                 std::span<const double> jac, std::size_t n_params,
                                 std::span<double> info, std::span<double> grad);
void philox4x32_10(std::uint32_t key0, std::uint32_t key1, const std::array<const std::uint32_t*, 4>& ctr,
                   const std::array<std::uint32_t*, 4>& out, std::size_t n);
}  // namespace avx2

}  // namespace pals::kernels
