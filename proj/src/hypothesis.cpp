#include "pals/hypothesis.hpp"

#include "pals/errors.hpp"
#include "pals/histogram_io.hpp"
#include "pals/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace pals {

namespace {

const ParamId kI2{ParamKind::intensity, 2};
const ParamId kRate2{ParamKind::rate, 2};

void finish(TestResult& r) {
  r.statistic = std::max(0.0, r.deviance_null - r.deviance_alt);
  if (!r.valid) {
    r.p_value = 1.0;
    r.effective_sigma = 0.0;
    r.reject = false;
    return;
  }
  r.p_value = stats::chi2_sf(r.statistic, r.dof);
  r.effective_sigma = std::sqrt(r.statistic);
  r.reject = r.p_value < r.significance;
}

void note(TestResult& r, const std::string& what, const FitResult& f) {
  if (f.converged) return;
  r.valid = false;
  if (!r.message.empty()) r.message += "; ";
  r.message += what + " did not converge: " + f.message;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

FitSpec adapt_spec(const FitSpec& tmpl, const Histogram& h) {
  const FitSpec fresh = make_fit_spec(h, tmpl.initial);
  FitSpec s = tmpl;
  s.initial.total_events = fresh.initial.total_events;
  s.initial.background_per_channel = fresh.initial.background_per_channel;
  return s;
}

TestResult lr_test_doubling(const Histogram& h_perp, const Histogram& h_par, const FitSpec& spec, double significance) {
  if (h_perp.channel_width != h_par.channel_width || h_perp.n_channels() != h_par.n_channels())
    throw DomainError("doubling test needs histograms of equal geometry");
  FitSpec s_perp = adapt_spec(spec, h_perp), s_par = adapt_spec(spec, h_par);
  s_perp.set_free(kI2, true);
  s_par.set_free(kI2, true);

  TestResult r;
  r.null_hypothesis = "intensity_2 equal in perpendicular and parallel orientation";
  r.significance = significance;
  const std::vector<Histogram> hs = {h_perp, h_par};
  const std::vector<FitSpec> specs = {s_perp, s_par};
  const JointFit joint = fit_joint(hs, specs, {kI2});
  r.null_fits = joint.parts;
  r.deviance_null = joint.deviance;
  if (!joint.converged) note(r, "joint null fit", joint.parts[0]);

  for (std::size_t d = 0; d < 2; ++d) {
    FitSpec alt = specs[d];
    alt.initial = joint.parts[d].model;
    r.alt_fits.push_back(fit_mle(hs[d], alt));
    note(r, d == 0 ? "perpendicular fit" : "parallel fit", r.alt_fits.back());
    r.deviance_alt += r.alt_fits.back().deviance;
  }
  finish(r);
  return r;
}

TestResult lr_test_rate_shift(const Histogram& h, double lambda_null, const FitSpec& spec, double significance) {
  if (!(lambda_null > 0.0)) throw DomainError("lambda_null must be > 0");
  FitSpec null_spec = adapt_spec(spec, h);
  null_spec.initial.components.at(2).rate = lambda_null;
  null_spec.set_free(kRate2, false);

  TestResult r;
  r.null_hypothesis = "rate_2 = " + format_double(lambda_null) + " 1/us";
  r.significance = significance;
  r.null_fits.push_back(fit_mle(h, null_spec));
  note(r, "null fit", r.null_fits[0]);
  r.deviance_null = r.null_fits[0].deviance;

  FitSpec alt = null_spec;
  alt.set_free(kRate2, true);
  alt.initial = r.null_fits[0].model;
  r.alt_fits.push_back(fit_mle(h, alt));
  note(r, "free-rate fit", r.alt_fits[0]);
  r.deviance_alt = r.alt_fits[0].deviance;
  finish(r);
  return r;
}

Ratio doubling_ratio(const TestResult& r) {
  if (r.alt_fits.size() != 2) throw DomainError("not a doubling test result");
  const double a = r.alt_fits[1].value(kI2), sa = r.alt_fits[1].error(kI2);
  const double b = r.alt_fits[0].value(kI2), sb = r.alt_fits[0].error(kI2);
  Ratio q;
  q.value = a / b;
  q.error = std::abs(q.value) * std::sqrt((sa / a) * (sa / a) + (sb / b) * (sb / b));
  return q;
}

std::string to_string(PowerTest t) { return t == PowerTest::doubling ? "doubling" : "rate_shift"; }

PowerTest parse_power_test(const std::string& s) {
  for (auto t : {PowerTest::doubling, PowerTest::rate_shift})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown test '" + s + "'");
}

std::optional<std::size_t> PowerCurve::first_reaching(double level) const {
  for (std::size_t i = 0; i < points.size(); ++i)
    if (points[i].power >= level) return i;
  return std::nullopt;
}

double live_time_for_events(const SpectrometerConfig& cfg, const AnomalyScenario& s, const SpectrumModel& base,
                            double n_events) {
  SpectrometerConfig unit = cfg;
  unit.live_time = 1.0;
  const double per_second = observed_model(unit, s, base).total_events;
  if (!(per_second > 0.0)) throw DomainError("configuration records no true coincidences");
  return n_events / per_second;
}

PowerCurve power_scan(const PowerScanSpec& spec) {
  if (spec.replicas == 0) throw DomainError("power scan needs at least one replica");
  if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  if (spec.grid.empty()) throw DomainError("power scan grid is empty");
  for (std::size_t i = 0; i < spec.grid.size(); ++i) {
    if (!(spec.grid[i] >= 0.0) || !std::isfinite(spec.grid[i])) throw DomainError("grid values must be finite and >= 0");
    if (i > 0 && !(spec.grid[i] > spec.grid[i - 1])) throw DomainError("power scan grid must be increasing");
  }
  spec.cfg.validate();
  spec.scenario.validate();

  AnomalyScenario perp = spec.scenario, par = spec.scenario;
  perp.field_orientation = FieldOrientation::perpendicular;
  par.field_orientation = FieldOrientation::parallel;
  AnomalyScenario standard = spec.scenario;
  standard.mode = ExperimentMode::standard_qed;
  const double lambda_null = spec.base.components.at(2).rate;

  PowerCurve curve;
  curve.test = spec.test;
  curve.alpha = spec.alpha;
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    PowerPoint pt;
    pt.n_events = spec.grid[g];
    if (pt.n_events == 0.0) {
      pt.power = spec.alpha;
      pt.ci = {spec.alpha, spec.alpha};
      curve.points.push_back(pt);
      continue;
    }
    const std::uint64_t seed = derive_seed(spec.seed, g);
    SpectrometerConfig cfg_a = spec.cfg, cfg_b = spec.cfg;
    FitSpec tmpl;
    if (spec.test == PowerTest::doubling) {
      cfg_a.live_time = live_time_for_events(spec.cfg, perp, spec.base, pt.n_events);
      cfg_b.live_time = live_time_for_events(spec.cfg, par, spec.base, pt.n_events);
    } else {
      cfg_a.live_time = live_time_for_events(spec.cfg, spec.scenario, spec.base, pt.n_events);
    }
    tmpl = make_fit_spec(observed_model(cfg_a, standard, spec.base));
    tmpl.compute_covariance = false;

    std::vector<TestResult> results(spec.replicas);
    parallel_for(spec.replicas, spec.threads, [&](unsigned, std::size_t r) {
      if (spec.test == PowerTest::doubling) {
        const Histogram a = simulate_spectrum(cfg_a, perp, spec.base, {seed, 2 * r}, 1);
        const Histogram b = simulate_spectrum(cfg_b, par, spec.base, {seed, 2 * r + 1}, 1);
        results[r] = lr_test_doubling(a, b, tmpl, spec.alpha);
      } else {
        const Histogram h = simulate_spectrum(cfg_a, spec.scenario, spec.base, {seed, r}, 1);
        results[r] = lr_test_rate_shift(h, lambda_null, tmpl, spec.alpha);
      }
      results[r].null_fits.clear();
      results[r].alt_fits.clear();
    });
    pt.replicas = spec.replicas;
    for (const auto& t : results) {
      pt.rejections += t.reject ? 1 : 0;
      pt.invalid += t.valid ? 0 : 1;
      pt.p_values.push_back(t.p_value);
      pt.sigmas.push_back(t.effective_sigma);
    }
    pt.power = static_cast<double>(pt.rejections) / static_cast<double>(pt.replicas);
    pt.ci = stats::binomial_interval(pt.rejections, pt.replicas, 0.95);
    pt.median_sigma = median(pt.sigmas);
    curve.points.push_back(std::move(pt));
  }
  return curve;
}

}  // namespace pals
