#include "doctest.h"

#include "oracles.hpp"
#include "pals/decay_model.hpp"
#include "pals/errors.hpp"
#include "pals/kernels.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace pals;

namespace {

const InstrumentResponse kIrf{1.7, 25.0};

SpectrumModel single(double rate, double intensity, double total, double bkg) {
  SpectrumModel m;
  m.components = {{rate, intensity}};
  m.irf = kIrf;
  m.prompt_fraction = 1.0 - intensity;
  m.total_events = total;
  m.background_per_channel = bkg;
  return m;
}

}  // namespace

TEST_CASE("eval_component: degenerate response is the bare exponential") {
  const DecayComponent c{7.039979, 0.3};
  const InstrumentResponse sharp{0.0, 10.0};
  const double lambda = c.rate / 1000.0;
  for (double t : {10.5, 20.0, 300.0, 1500.0})
    CHECK(eval_component(c, sharp, t) ==
          doctest::Approx(c.intensity * lambda * std::exp(-lambda * (t - 10.0))).epsilon(1e-14));
  CHECK(eval_component(c, sharp, 9.0) == 0.0);

  // Very narrow Gaussian approaches the same values.
  const InstrumentResponse narrow{1e-4, 10.0};
  CHECK(eval_component(c, narrow, 300.0) ==
        doctest::Approx(c.intensity * lambda * std::exp(-lambda * 290.0)).epsilon(1e-6));
}

TEST_CASE("eval_component: tail vanishes and density is non-negative") {
  const DecayComponent c{7.039979, 1.0};
  CHECK(eval_component(c, kIrf, 1e6) < 1e-300);
  for (double t = -50.0; t < 3000.0; t += 0.77) CHECK(eval_component(c, kIrf, t) >= 0.0);
}

TEST_CASE("eval_component: non-finite inputs are domain errors") {
  const DecayComponent c{7.0, 1.0};
  CHECK_THROWS_AS(eval_component(c, kIrf, NAN), DomainError);
  CHECK_THROWS_AS(eval_component({INFINITY, 1.0}, kIrf, 1.0), DomainError);
  CHECK_THROWS_AS(eval_component({-1.0, 1.0}, kIrf, 1.0), DomainError);
  CHECK_THROWS_AS(eval_component(c, {-1.0, 0.0}, 1.0), DomainError);
}

TEST_CASE("closed form agrees with brute-force trapezoid convolution") {
  for (double rate : {7.039979, 7.04, 1.0}) {
    const DecayComponent c{rate, 1.0};
    const auto pts = oracle::sample_points(kIrf, rate, 1000);
    double worst = 0.0;
    for (double t : pts) {
      const double ref = oracle::convolved_density(rate, kIrf, t);
      worst = std::max(worst, std::abs(eval_component(c, kIrf, t) - ref) / ref);
    }
    CAPTURE(rate);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("density integrates to the intensity") {
  for (double rate : {8000.0, 40.0, 7.039979, 1.0}) {
    const DecayComponent c{rate, 0.37};
    const double sigma = kIrf.sigma();
    const double lo = kIrf.t0 - 10 * sigma;
    const double hi = kIrf.t0 + 40.0 * 1000.0 / rate + 10 * sigma;
    const double integral = oracle::simpson([&](double t) { return eval_component(c, kIrf, t); }, lo, hi, 200000);
    CAPTURE(rate);
    CHECK(integral == doctest::Approx(0.37).epsilon(1e-4));
  }
}

TEST_CASE("mean lifetime") {
  CHECK(std::abs(mean_lifetime({7.039979, 0.3}) - 142.046) < 5e-4);
  CHECK(mean_lifetime({1.0, 0.3}) == doctest::Approx(1000.0).epsilon(1e-15));
  CHECK(std::abs(mean_lifetime({7.0404, 0.3}) - 142.037) < 5e-4);
  CHECK_THROWS_AS(mean_lifetime({0.0, 0.3}), DomainError);
}

TEST_CASE("expected_counts: empty source gives flat background") {
  auto m = single(7.0, 1.0, 0.0, 3.5);
  const auto mu = expected_counts(m, {0.5, 256});
  REQUIRE(mu.size() == 256);
  for (double v : mu) CHECK(v == doctest::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("expected_counts: window sum equals total events times intensity") {
  const double rate = 7.039979;
  const double lambda = rate / 1000.0;
  const double sigma = kIrf.sigma();
  SpectrumModel m = single(rate, 1.0, 1.0e6, 0.0);
  // window starting at t0 - 10 sigma, ending at t0 + 30/lambda
  const double w = 0.5;
  m.irf.t0 = 10 * sigma;
  const auto n = static_cast<std::size_t>(std::ceil((10 * sigma + 30.0 / lambda) / w));
  const auto mu = expected_counts(m, {w, n});
  const double sum = std::accumulate(mu.begin(), mu.end(), 0.0);
  // analytic captured fraction of the EMG over [0, n w]
  const double captured = oracle::emg_cdf(lambda, sigma, n * w - m.irf.t0) - oracle::emg_cdf(lambda, sigma, -m.irf.t0);
  CHECK(sum == doctest::Approx(1.0e6 * captured).epsilon(1e-10));
  CHECK(sum == doctest::Approx(1.0e6).epsilon(1e-4));
}

TEST_CASE("expected_counts: tail channels decay by exp(-lambda w)") {
  const double rate = 7.0404;
  const double lambda = rate / 1000.0;
  const auto m = single(rate, 1.0, 1.0e7, 0.0);
  const ChannelGeometry g{0.5, 4096};
  const auto mu = expected_counts(m, g);
  const double ratio = std::exp(-lambda * g.channel_width);
  double worst = 0.0;
  for (std::size_t k = 200; k + 1 < g.n_channels; ++k)
    worst = std::max(worst, std::abs(mu[k + 1] / mu[k] - ratio) / ratio);
  CHECK(worst < 1e-10);
}

TEST_CASE("expected_counts: strictly decreasing tail and background floor") {
  auto m = default_neon_model();
  m.background_per_channel = 2.0;
  const ChannelGeometry g{0.5, 4096};
  const auto mu = expected_counts(m, g);
  const double sigma = m.irf.sigma();
  const double slowest = 1000.0 / m.components[2].rate;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    CHECK(mu[k] >= 2.0);
    const double t = k * g.channel_width - m.irf.t0;
    if (t > 5 * sigma + 5 * slowest && k + 1 < mu.size()) CHECK(mu[k + 1] - 2.0 < mu[k] - 2.0);
  }
}

TEST_CASE("expected_counts is linear in components") {
  const ChannelGeometry g{0.5, 2048};
  SpectrumModel both;
  both.components = {{40.0, 0.6}, {7.039979, 0.4}};
  both.irf = kIrf;
  both.total_events = 1e6;
  both.background_per_channel = 1.25;

  auto a = both;
  a.components = {{40.0, 0.6}};
  a.prompt_fraction = 0.4;  // keeps weights normalised; prompt removed below
  auto b = both;
  b.components = {{7.039979, 0.4}};
  b.prompt_fraction = 0.6;

  auto prompt_only = both;
  prompt_only.components.clear();
  prompt_only.prompt_fraction = 1.0;
  prompt_only.background_per_channel = 0.0;
  const auto p = expected_counts(prompt_only, g);

  const auto mab = expected_counts(both, g);
  const auto ma = expected_counts(a, g);
  const auto mb = expected_counts(b, g);
  for (std::size_t k = 0; k < g.n_channels; ++k) {
    const double sum = (ma[k] - 0.4 * p[k]) + (mb[k] - 0.6 * p[k]) - 1.25;
    CHECK(mab[k] == doctest::Approx(sum).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("expected_counts: invalid geometry and models") {
  auto m = default_neon_model();
  CHECK_THROWS_AS(expected_counts(m, {0.5, 0}), DomainError);
  CHECK_THROWS_AS(expected_counts(m, {0.0, 10}), DomainError);
  CHECK_THROWS_AS(expected_counts(m, {-1.0, 10}), DomainError);
  m.components[0].intensity = 0.5;  // weights no longer sum to one
  CHECK_THROWS_AS(expected_counts(m, {0.5, 10}), DomainError);
}

TEST_CASE("channel integration matches the analytic EMG CDF difference") {
  const auto m = default_neon_model();
  const ChannelGeometry g{0.5, 4096};
  const auto mu = expected_counts(m, g);
  const double sigma = m.irf.sigma();
  for (std::size_t k : {0u, 40u, 49u, 50u, 51u, 60u, 500u, 4000u}) {
    double expect = 0.0;
    for (const auto& c : m.components) {
      const double lambda = c.rate / 1000.0;
      const double a = k * 0.5 - m.irf.t0, b = a + 0.5;
      expect += c.intensity * (oracle::emg_cdf(lambda, sigma, b) - oracle::emg_cdf(lambda, sigma, a));
    }
    CAPTURE(k);
    CHECK(mu[k] == doctest::Approx(m.total_events * expect).epsilon(1e-6));
  }
}

TEST_CASE("parameter packing round-trips and names parse") {
  const auto m = default_neon_model();
  const auto p = pack_params(m);
  CHECK(p.size() == param_count(3));
  const auto back = unpack_params(p, 3);
  CHECK(pack_params(back) == p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const ParamId id = param_at(i, 3);
    CHECK(param_index(id, 3) == i);
    CHECK(parse_param_name(id.name(), 3) == id);
  }
  CHECK_THROWS_AS(parse_param_name("rate_3", 3), DomainError);
}

TEST_CASE("model Jacobian matches central finite differences") {
  auto m = default_neon_model();
  m.prompt_fraction = 0.1;
  m.components[1].intensity = 0.55;
  m.background_per_channel = 3.0;
  const ChannelGeometry g{0.5, 600};
  const auto ev = evaluate_model(m, g, 0, g.n_channels, true);
  auto p = pack_params(m);
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double h = 1e-5 * std::max(std::abs(p[j]), 1.0);
    auto plus = p, minus = p;
    plus[j] += h;
    minus[j] -= h;
    const auto up = evaluate_model(unpack_params(plus, 3), g, 0, g.n_channels, false).expected;
    const auto dn = evaluate_model(unpack_params(minus, 3), g, 0, g.n_channels, false).expected;
    double scale = 0.0, worst = 0.0;
    for (std::size_t k = 0; k < g.n_channels; ++k) scale = std::max(scale, std::abs(ev.column(j)[k]));
    for (std::size_t k = 0; k < g.n_channels; ++k) {
      const double fd = (up[k] - dn[k]) / (2 * h);
      worst = std::max(worst, std::abs(fd - ev.column(j)[k]) / std::max(scale, 1e-300));
    }
    CAPTURE(param_at(j, 3).name());
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("expected counts are the same through scalar and avx2 kernels") {
  if (!kernels::isa_supported(kernels::Isa::avx2)) return;
  const auto m = default_neon_model();
  const ChannelGeometry g{0.5, 4096};
  const auto before = kernels::active_isa();
  kernels::select_isa(kernels::Isa::scalar);
  const auto a = evaluate_model(m, g, 0, g.n_channels, true);
  kernels::select_isa(kernels::Isa::avx2);
  const auto b = evaluate_model(m, g, 0, g.n_channels, true);
  kernels::select_isa(before);
  for (std::size_t k = 0; k < a.expected.size(); ++k)
    CHECK(a.expected[k] == doctest::Approx(b.expected[k]).epsilon(1e-11).scale(1e-9));
  for (std::size_t k = 0; k < a.jacobian.size(); ++k)
    CHECK(a.jacobian[k] == doctest::Approx(b.jacobian[k]).epsilon(1e-10).scale(1e-9));
}
