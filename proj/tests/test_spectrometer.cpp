#include "pals/errors.hpp"
#include "pals/histogram_io.hpp"
#include "pals/kernels.hpp"
#include "pals/spectrometer.hpp"
#include "pals/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

using namespace pals;

namespace {

SpectrometerConfig small_config(double live_time = 10.0) {
  SpectrometerConfig cfg;
  cfg.live_time = live_time;
  cfg.source_activity = 1.0e5;
  return cfg;
}

AnomalyScenario scenario(ExperimentMode m, FieldOrientation o) {
  AnomalyScenario s;
  s.mode = m;
  s.field_orientation = o;
  return s;
}

std::string bytes(const Histogram& h) {
  std::ostringstream s;
  write_histogram(h, s);
  return s.str();
}

}  // namespace

TEST_CASE("standard qed scenario is the identity") {
  const SpectrumModel base = default_neon_model();
  for (auto o : {FieldOrientation::none, FieldOrientation::perpendicular, FieldOrientation::parallel}) {
    const SpectrumModel m = apply_scenario(base, scenario(ExperimentMode::standard_qed, o));
    CHECK(pack_params(m) == pack_params(base));
  }
}

TEST_CASE("resonance transfers o-Ps intensity to the prompt peak unless the field is parallel") {
  const SpectrumModel base = default_neon_model();
  const auto perp = apply_scenario(base, scenario(ExperimentMode::resonance, FieldOrientation::perpendicular));
  const auto none = apply_scenario(base, scenario(ExperimentMode::resonance, FieldOrientation::none));
  const auto par = apply_scenario(base, scenario(ExperimentMode::resonance, FieldOrientation::parallel));
  CHECK(perp.components[2].intensity == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(perp.prompt_fraction == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(none.components[2].intensity == perp.components[2].intensity);
  CHECK(pack_params(par) == pack_params(base));
  CHECK(par.components[2].intensity / perp.components[2].intensity == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(perp.weight_sum() == doctest::Approx(base.weight_sum()).epsilon(1e-15));

  AnomalyScenario s = scenario(ExperimentMode::resonance, FieldOrientation::perpendicular);
  for (double d : {0.0, 0.25, 0.8}) {
    s.doubling_transfer = d;
    const auto p = apply_scenario(base, s);
    CHECK(par.components[2].intensity / p.components[2].intensity == doctest::Approx(1.0 / (1.0 - d)));
  }
}

TEST_CASE("rate-shift scenario") {
  const SpectrumModel base = default_neon_model();
  const auto shifted = apply_scenario(base, scenario(ExperimentMode::nonresonance_lambda, FieldOrientation::none));
  CHECK(shifted.components[2].rate == doctest::Approx(7.039979 * 1.0019).epsilon(1e-15));
  CHECK(std::abs(shifted.components[2].rate - 7.053355) < 5e-7);
  CHECK(apply_scenario(base, scenario(ExperimentMode::nonresonance_lambda, FieldOrientation::perpendicular))
            .components[2].rate == shifted.components[2].rate);
  CHECK(apply_scenario(base, scenario(ExperimentMode::nonresonance_lambda, FieldOrientation::parallel))
            .components[2].rate == base.components[2].rate);
}

TEST_CASE("scenario preconditions") {
  SpectrumModel two = default_neon_model();
  two.components.pop_back();
  CHECK_THROWS_AS(apply_scenario(two, AnomalyScenario{}), DomainError);
  AnomalyScenario bad;
  bad.doubling_transfer = 1.5;
  CHECK_THROWS_AS(apply_scenario(default_neon_model(), bad), DomainError);
  bad = AnomalyScenario{};
  bad.lambda_shift = -0.1;
  CHECK_THROWS_AS(apply_scenario(default_neon_model(), bad), DomainError);
  CHECK(parse_experiment_mode("resonance") == ExperimentMode::resonance);
  CHECK(parse_field_orientation("parallel") == FieldOrientation::parallel);
  CHECK_THROWS_AS(parse_field_orientation("sideways"), ConfigError);
}

TEST_CASE("discriminator logic") {
  const SpectrometerConfig cfg;
  CHECK_FALSE(coincidence_accepted(cfg, 1.28, 1.022));
  CHECK(coincidence_accepted(cfg, 1.28, 0.40));
  CHECK(coincidence_accepted(cfg, 1.28, 0.34));
  CHECK(coincidence_accepted(cfg, 1.28, 0.51));
  CHECK_FALSE(coincidence_accepted(cfg, 1.28, 0.339));
  CHECK_FALSE(coincidence_accepted(cfg, 1.28, 0.511));
  // a start pulse inside the stop window never opens the gate
  CHECK_FALSE(coincidence_accepted(cfg, 0.40, 0.40));
  CHECK_FALSE(coincidence_accepted(cfg, 0.51, 0.40));
  SpectrometerConfig bad;
  bad.start_energy = 0.45;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = SpectrometerConfig{};
  bad.stop_window = {0.51, 0.34};
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("sampled o-Ps event inside the window is accepted, 1.022 MeV prompt deposits never") {
  SpectrometerConfig cfg;
  cfg.deposit_3gamma = {0.40, 0.40};
  cfg.deposit_prompt = {1.022, 1.022};
  SpectrumModel m = default_neon_model();
  m.components = {{8000, 0}, {40, 0}, {7.039979, 0.5}};
  m.prompt_fraction = 0.5;
  int ops = 0, prompt = 0;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto ev = sample_event(cfg, m, {3, 0}, i);
    if (ev.true_channel == TrueChannel::oPs) {
      ++ops;
      CHECK(ev.accepted);
      CHECK(ev.stop_energy_deposit == 0.40);
    } else {
      ++prompt;
      CHECK(ev.true_channel == TrueChannel::prompt_transfer);
      CHECK_FALSE(ev.accepted);
    }
  }
  CHECK(ops > 900);
  CHECK(prompt > 900);
}

TEST_CASE("prompt-transfer events have zero emission delay and Gaussian timing") {
  SpectrometerConfig cfg;
  SpectrumModel m = default_neon_model();
  for (auto& c : m.components) c.intensity = 0.0;
  m.prompt_fraction = 1.0;
  const EventSampler sampler(cfg, m, {11, 0});
  std::vector<double> t;
  const double sigma = cfg.timing_fwhm / kFwhmPerSigma;
  for (std::uint64_t i = 0; i < 200000; ++i) {
    const auto ev = sampler.sample_event(i);
    CHECK(ev.emission_delay == 0.0);
    t.push_back(ev.measured_delay);
  }
  const auto ks = stats::ks_test(t, [&](double x) { return 0.5 * std::erfc(-(x - m.irf.t0) / (sigma * std::sqrt(2.0))); });
  CHECK(ks.p_value > 1e-3);
}

TEST_CASE("exponential delays per channel") {
  SpectrometerConfig cfg;
  SpectrumModel m = default_neon_model();
  m.components = {{8000, 0}, {40, 0}, {7.039979, 1.0}};
  const EventSampler sampler(cfg, m, {5, 1});
  std::vector<double> d;
  for (std::uint64_t i = 0; i < 100000; ++i) d.push_back(sampler.sample_event(i).emission_delay);
  const double lam = rate_per_ns(7.039979);
  CHECK(stats::ks_test(d, [&](double x) { return x <= 0 ? 0.0 : -std::expm1(-lam * x); }).p_value > 1e-3);
}

TEST_CASE("no accepted event outside the stop window") {
  SpectrometerConfig cfg;
  cfg.deposit_2gamma = {0.0, 1.3};
  cfg.deposit_3gamma = {0.1, 0.6};
  cfg.deposit_prompt = {1.022, 1.022};
  SpectrumModel m = default_neon_model();
  m.components[2].intensity = 0.15;
  m.prompt_fraction = 0.15;
  const EventSampler sampler(cfg, m, {2, 0});
  std::size_t accepted = 0, prompt = 0;
  for (std::uint64_t i = 0; i < 200000; ++i) {
    const auto ev = sampler.sample_event(i);
    if (ev.true_channel == TrueChannel::prompt_transfer) ++prompt;
    if (!ev.accepted) continue;
    ++accepted;
    CHECK(cfg.stop_window.contains(ev.stop_energy_deposit));
    CHECK(ev.true_channel != TrueChannel::prompt_transfer);
  }
  CHECK(accepted > 0);
  CHECK(prompt > 0);
}

TEST_CASE("empty source and no accidentals give an all-zero histogram") {
  SpectrometerConfig cfg;
  cfg.source_activity = 0.0;
  cfg.accidental_rate = 0.0;
  const auto h = simulate_spectrum(cfg, AnomalyScenario{}, default_neon_model(), {1, 0});
  CHECK(h.n_channels() == 4096);
  CHECK(h.total() == 0);
  CHECK(h.metadata.at("seed") == "1");
}

TEST_CASE("accidental floor is flat at rT/n") {
  SpectrometerConfig cfg;
  cfg.source_activity = 0.0;
  cfg.accidental_rate = 1.0e5;
  cfg.live_time = 10.0;
  const auto h = simulate_spectrum(cfg, AnomalyScenario{}, default_neon_model(), {9, 0});
  const double per_channel = cfg.accidental_rate * cfg.live_time / cfg.n_channels;
  const double mean = static_cast<double>(h.total()) / h.n_channels();
  CHECK(std::abs(mean - per_channel) < 3.0 * std::sqrt(per_channel / h.n_channels()));
  std::vector<double> e(h.n_channels(), per_channel);
  CHECK(stats::pearson_chi2(h.counts, e).p_value > 1e-3);

  const EventSampler sampler(cfg, default_neon_model(), {9, 0});
  std::vector<double> t;
  for (std::uint64_t i = 0; i < 1000000; ++i) t.push_back(sampler.sample_accidental(i).measured_delay);
  const double span = cfg.geometry().span();
  CHECK(stats::ks_test(t, [&](double x) { return x / span; }).p_value > 1e-3);
}

TEST_CASE("simulated spectrum matches the expectation model") {
  SpectrometerConfig cfg = small_config(10.0);
  cfg.accidental_rate = 200.0;
  const AnomalyScenario s = scenario(ExperimentMode::resonance, FieldOrientation::perpendicular);
  const auto h = simulate_spectrum(cfg, s, default_neon_model(), {21, 0});
  const SpectrumModel obs = observed_model(cfg, s, default_neon_model());
  const auto e = expected_counts(obs, cfg.geometry());
  double total_e = 0.0;
  for (double v : e) total_e += v;
  CHECK(std::abs(static_cast<double>(h.total()) - total_e) < 5.0 * std::sqrt(total_e));
  CHECK(stats::pearson_chi2(h.counts, e).p_value > 1e-3);
}

TEST_CASE("observed model applies window acceptance") {
  SpectrometerConfig cfg;
  cfg.deposit_prompt = {1.022, 1.022};
  const auto a = window_acceptance(cfg);
  CHECK(a[0] == doctest::Approx(0.17 / 0.511));
  CHECK(a[2] == 0.0);
  const auto obs = observed_model(cfg, scenario(ExperimentMode::resonance, FieldOrientation::none), default_neon_model());
  CHECK(obs.prompt_fraction == 0.0);
  CHECK(obs.components[2].intensity == doctest::Approx(0.15 / 0.85));
  CHECK(obs.total_events == doctest::Approx(cfg.source_activity * cfg.live_time * 0.85 * a[0]));
  CHECK(obs.irf.fwhm == cfg.timing_fwhm);
}

TEST_CASE("results do not depend on the thread count") {
  SpectrometerConfig cfg = small_config(5.0);
  cfg.accidental_rate = 5000.0;
  const auto base = default_neon_model();
  const auto h1 = simulate_spectrum(cfg, AnomalyScenario{}, base, {77, 3}, 1);
  const auto h4 = simulate_spectrum(cfg, AnomalyScenario{}, base, {77, 3}, 4);
  const auto h7 = simulate_spectrum(cfg, AnomalyScenario{}, base, {77, 3}, 7);
  CHECK(bytes(h1) == bytes(h4));
  CHECK(bytes(h1) == bytes(h7));
  const auto other = simulate_spectrum(cfg, AnomalyScenario{}, base, {78, 3}, 1);
  CHECK(other.counts != h1.counts);
  const auto other_stream = simulate_spectrum(cfg, AnomalyScenario{}, base, {77, 4}, 1);
  CHECK(other_stream.counts != h1.counts);
}

TEST_CASE("merge identities") {
  SpectrometerConfig cfg = small_config(3.0);  // ~1e5 accepted events per replica
  const auto base = default_neon_model();
  const auto reps = simulate_replicas(cfg, AnomalyScenario{}, base, 5, 8, 1);
  REQUIRE(reps.size() == 8);
  CHECK(reps[3].metadata.at("stream") == "3");

  Histogram zero = reps[0];
  std::fill(zero.counts.begin(), zero.counts.end(), 0);
  zero.live_time = 0.0;
  const Histogram a = reps[0], b = reps[1], c = reps[2];
  CHECK(merge_histograms(std::vector{a, zero}).counts == a.counts);
  CHECK(merge_histograms(std::vector{a, b}).counts == merge_histograms(std::vector{b, a}).counts);
  CHECK(merge_histograms(std::vector{merge_histograms(std::vector{a, b}), c}).counts ==
        merge_histograms(std::vector{a, merge_histograms(std::vector{b, c})}).counts);

  const Histogram all = merge_histograms(reps);
  CHECK(all.live_time == doctest::Approx(8 * cfg.live_time));
  CHECK(all.metadata.count("stream") == 0);
  CHECK(all.metadata.at("seed") == "5");
  const auto reps_mt = simulate_replicas(cfg, AnomalyScenario{}, base, 5, 8, 3);
  const Histogram left = merge_histograms(std::vector(reps_mt.begin(), reps_mt.begin() + 5));
  const Histogram right = merge_histograms(std::vector(reps_mt.begin() + 5, reps_mt.end()));
  CHECK(merge_histograms(std::vector{right, left}).counts == all.counts);

  Histogram narrow = a;
  narrow.counts.resize(100);
  CHECK_THROWS_AS(merge_histograms(std::vector{a, narrow}), DomainError);
  Histogram wide = a;
  wide.channel_width = 1.0;
  CHECK_THROWS_AS(merge_histograms(std::vector{a, wide}), DomainError);
  CHECK_THROWS_AS(merge_histograms(std::vector<Histogram>{}), DomainError);
}

TEST_CASE("time zero must lie on the channel axis") {
  SpectrometerConfig cfg = small_config(0.01);
  SpectrumModel m = default_neon_model();
  m.irf.t0 = cfg.geometry().span() + 1.0;
  CHECK_THROWS_AS(simulate_spectrum(cfg, AnomalyScenario{}, m, {1, 0}), DomainError);
  m.irf.t0 = -1.0;
  CHECK_THROWS_AS(simulate_spectrum(cfg, AnomalyScenario{}, m, {1, 0}), DomainError);
}

TEST_CASE("batched accumulation equals per-event sampling") {
  SpectrometerConfig cfg = small_config();
  cfg.deposit_prompt = {0.2, 1.1};
  cfg.accidental_rate = 100.0;
  const auto model = apply_scenario(default_neon_model(), AnomalyScenario{});
  const EventSampler sampler(cfg, model, {11, 2});
  for (int isa = 0; isa < 2; ++isa) {
    if (isa == 1 && !kernels::isa_supported(kernels::Isa::avx2)) break;
    kernels::select_isa(isa == 0 ? kernels::Isa::scalar : kernels::Isa::avx2);
    std::vector<std::uint64_t> batch(cfg.n_channels, 0), reference(cfg.n_channels, 0);
    sampler.accumulate_events(5, 20011, batch);
    sampler.accumulate_accidentals(3, 4100, batch);
    auto bin = [&](const EventRecord& ev) {
      if (!ev.accepted) return;
      const double x = ev.measured_delay / cfg.channel_width;
      if (x >= 0.0 && x < static_cast<double>(cfg.n_channels)) ++reference[static_cast<std::size_t>(x)];
    };
    for (std::uint64_t i = 5; i < 20011; ++i) bin(sampler.sample_event(i, false));
    for (std::uint64_t i = 3; i < 4100; ++i) bin(sampler.sample_accidental(i));
    CHECK(batch == reference);
  }
  kernels::select_isa(kernels::detect_isa());
  std::vector<std::uint64_t> wrong(7);
  CHECK_THROWS_AS(sampler.accumulate_events(0, 10, wrong), DomainError);
}
