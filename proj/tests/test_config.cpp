#include "pals/config.hpp"
#include "pals/errors.hpp"

#include <doctest.h>

#include <sstream>

using namespace pals;

namespace {

Config parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace

TEST_CASE("values are read into the typed configuration") {
  const auto c = parse(
      "[run]\nseed = 42\n"
      "[spectrometer]\nstop_window = 0.3, 0.5\naccidental_rate = 250\nn_channels = 2048\nlive_time = 3.5\n"
      "[model]\nrate_2 = 7.0404\nintensity_1 = 0.6\nintensity_2 = 0.35\nt0 = 30\n"
      "[scenario]\nmode = resonance\nfield_orientation = parallel\ndoubling_transfer = 0.4\n"
      "[fit]\nfixed = fwhm, t0\nbound.rate_2 = 6, 8\nobjective = least_squares\nrate_unit = per_ns\n"
      "[experiment]\ntest = rate_shift\nn_events = 2e5\nlambda_null = 7.039979\n"
      "[power]\ngrid = 0, 1e4, 1e5\nreplicas = 12\nalpha = 0.0027\n"
      "[constants]\nalpha = 0.0073\nG = 2.5e-7\n");
  CHECK(c.seed == 42);
  CHECK(c.spectrometer.stop_window.low == 0.3);
  CHECK(c.spectrometer.stop_window.high == 0.5);
  CHECK(c.spectrometer.accidental_rate == 250.0);
  CHECK(c.spectrometer.n_channels == 2048);
  CHECK(c.spectrometer.live_time == 3.5);
  CHECK(c.model.components.size() == 3);
  CHECK(c.model.components[2].rate == 7.0404);
  CHECK(c.model.components[1].intensity == 0.6);
  CHECK(c.model.irf.t0 == 30.0);
  CHECK(c.scenario.mode == ExperimentMode::resonance);
  CHECK(c.scenario.field_orientation == FieldOrientation::parallel);
  CHECK(c.scenario.doubling_transfer == 0.4);
  CHECK(c.fit.fixed == std::vector<std::string>{"fwhm", "t0"});
  CHECK(c.fit.bounds.at("rate_2").lower == 6.0);
  CHECK(c.fit.objective == Objective::least_squares);
  CHECK(c.fit.rate_unit == RateUnit::per_ns);
  CHECK(c.experiment.test == PowerTest::rate_shift);
  CHECK(c.experiment.n_events == 2e5);
  CHECK(*c.experiment.lambda_null == 7.039979);
  CHECK(c.power.grid == std::vector<double>{0.0, 1e4, 1e5});
  CHECK(c.power.replicas == 12);
  CHECK(c.constants.alpha == 0.0073);
  CHECK(c.constants.G == 2.5e-7);
  CHECK(c.constants.hbar == PhysicalConstants{}.hbar);
  CHECK(c.has("scenario", "mode"));
  CHECK_FALSE(c.has("scenario", "lambda_shift"));
}

TEST_CASE("missing sections and keys are named") {
  const auto c = parse("[scenario]\nmode = resonance\n");
  try {
    c.require("spectrometer");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("[spectrometer]") != std::string::npos);
  }
  try {
    c.require("scenario", "field_orientation");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("field_orientation") != std::string::npos);
  }
  CHECK_NOTHROW(c.require("scenario", "mode"));
}

TEST_CASE("malformed input is rejected") {
  CHECK_THROWS_AS(parse("[spectrometer]\ncolour = blue\n"), ConfigError);
  CHECK_THROWS_AS(parse("[detector]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("seed = 1\n[run]\n"), ConfigError);
  CHECK_THROWS_AS(parse("[run]\nseed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[run]\nseed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse("[spectrometer]\nlive_time = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse("[spectrometer]\nlive_time = nan\n"), ConfigError);
  CHECK_THROWS_AS(parse("[spectrometer]\nstop_window = 0.3\n"), ConfigError);
  CHECK_THROWS_AS(parse("[spectrometer]\nstop_window = 0.3, 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[scenario]\nmode = sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse("[model]\nintensity_2 = 0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[model]\nrate_3 = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse("[power]\nreplicas = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse("[power]\ngrid = 10, 5\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment]\ntest = both\n"), ConfigError);
  CHECK_THROWS_AS(parse("[fit]\ncovariance = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse("[constants]\nG = 0\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.ini"), IoError);
}

TEST_CASE("component count can grow when every new component is given") {
  const auto c = parse("[model]\ncomponents = 4\nrate_3 = 2\nintensity_3 = 0.1\nintensity_1 = 0.55\n");
  REQUIRE(c.model.components.size() == 4);
  CHECK(c.model.components[3].rate == 2.0);
  CHECK(c.model.weight_sum() == doctest::Approx(1.0));
}

TEST_CASE("snapshot re-parses to the same configuration") {
  const auto c = parse("[spectrometer]\naccidental_rate = 125.5\n[model]\nrate_2 = 7.0404\n[fit]\nfree = rate_2\n"
                       "bound.rate_2 = 6, 8\n[power]\ngrid = 1e4, 2e4\n");
  const std::vector<std::string> sections{"run", "spectrometer", "model", "scenario", "fit", "experiment", "power",
                                          "constants"};
  const auto snap = config_snapshot(c, sections);
  std::string text;
  std::string current;
  for (const auto& [k, v] : snap) {
    const auto dot = k.find('.');
    const std::string section = k.substr(0, dot);
    if (section != current) {
      text += "[" + section + "]\n";
      current = section;
    }
    text += k.substr(dot + 1) + " = " + v + "\n";
  }
  const auto again = parse(text);
  CHECK(config_snapshot(again, sections) == snap);
  CHECK(snap.at("spectrometer.accidental_rate") == "125.5");
  CHECK(snap.at("fit.free") == "rate_2");
}

TEST_CASE("fit setup from the configuration") {
  Histogram h;
  h.counts.assign(4096, 3);
  auto c = parse("[fit]\nfree = rate_2, total_events\nbound.rate_2 = 1, 20\nlast_channel = 2000\n"
                 "init_from_data = false\n");
  auto spec = build_fit_spec(c, h);
  CHECK(spec.n_free() == 2);
  CHECK(spec.is_free({ParamKind::rate, 2}));
  CHECK(spec.bound({ParamKind::rate, 2}).upper == 20.0);
  CHECK(spec.last_channel == 2000);
  CHECK(spec.initial.total_events == default_neon_model().total_events);

  c = parse("[fit]\nfixed = fwhm\n");
  spec = build_fit_spec(c, h);
  CHECK_FALSE(spec.is_free({ParamKind::fwhm}));
  CHECK(spec.is_free({ParamKind::rate, 2}));
  const double pre = static_cast<double>(pre_t0_channels(h.geometry(), default_neon_model().irf));
  CHECK(spec.initial.background_per_channel == doctest::Approx(3.0 + 0.5 / pre));
  CHECK(spec.initial.total_events == 1.0);

  c = parse("[fit]\nfree = rate_7\n");
  CHECK_THROWS_AS(build_fit_spec(c, h), ConfigError);
  c = parse("[fit]\nlast_channel = 5000\n");
  CHECK_THROWS_AS(build_fit_spec(c, h), ConfigError);
}
