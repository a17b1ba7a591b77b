// Runtime selection between the scalar and AVX2 kernels.

#include "pals/kernels.hpp"

#include <atomic>
#include <stdexcept>
#include <string>

namespace pals::kernels {

namespace {

struct Table {
  Isa isa;
  void (*erfcx)(std::span<const double>, std::span<double>);
  void (*gauss_edge_terms)(std::span<const double>, double, std::span<double>, std::span<double>,
                           std::span<double>);
  void (*emg_excess)(std::span<const double>, std::span<const double>, double, double,
                     std::span<double>);
  void (*accumulate_normal_equations)(std::span<const double>, std::span<const double>,
                                      std::span<const double>, std::size_t, std::span<double>,
                                      std::span<double>);
  void (*philox4x32_10)(std::uint32_t, std::uint32_t, const std::array<const std::uint32_t*, 4>&,
                        const std::array<std::uint32_t*, 4>&, std::size_t);
};

constexpr Table kScalar{Isa::scalar, &scalar::erfcx, &scalar::gauss_edge_terms,
                        &scalar::emg_excess, &scalar::accumulate_normal_equations,
                        &scalar::philox4x32_10};
#ifdef PALS_HAVE_AVX2
constexpr Table kAvx2{Isa::avx2, &avx2::erfcx, &avx2::gauss_edge_terms, &avx2::emg_excess,
                      &avx2::accumulate_normal_equations, &avx2::philox4x32_10};
#endif

bool cpu_has_avx2() {
#if defined(PALS_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Table* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &kScalar;
    case Isa::avx2:
#ifdef PALS_HAVE_AVX2
      return cpu_has_avx2() ? &kAvx2 : nullptr;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

std::atomic<const Table*>& current() {
  static std::atomic<const Table*> t{table_for(detect_isa())};
  return t;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

bool isa_supported(Isa isa) { return table_for(isa) != nullptr; }

Isa detect_isa() { return cpu_has_avx2() ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return current().load()->isa; }

void select_isa(Isa isa) {
  const Table* t = table_for(isa);
  if (!t) throw std::invalid_argument("kernel ISA not supported: " + std::string(isa_name(isa)));
  current().store(t);
}

void erfcx(std::span<const double> y, std::span<double> out) { current().load()->erfcx(y, out); }

void gauss_edge_terms(std::span<const double> x, double sigma, std::span<double> lower,
                      std::span<double> upper, std::span<double> pdf) {
  current().load()->gauss_edge_terms(x, sigma, lower, upper, pdf);
}

void emg_excess(std::span<const double> x, std::span<const double> pdf, double sigma,
                double lambda, std::span<double> excess) {
  current().load()->emg_excess(x, pdf, sigma, lambda, excess);
}

void accumulate_normal_equations(std::span<const double> weight, std::span<const double> resid,
                                 std::span<const double> jac, std::size_t n_params,
                                 std::span<double> info, std::span<double> grad) {
  current().load()->accumulate_normal_equations(weight, resid, jac, n_params, info, grad);
}

void philox4x32_10(std::uint32_t key0, std::uint32_t key1, const std::array<const std::uint32_t*, 4>& ctr,
                   const std::array<std::uint32_t*, 4>& out, std::size_t n) {
  current().load()->philox4x32_10(key0, key1, ctr, out, n);
}

}  // namespace pals::kernels
