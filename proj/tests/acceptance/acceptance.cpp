// Acceptance run: one PASS/FAIL line per criterion, on stdout and in
// acceptance_results.txt in the working directory. Arguments select a subset
// by number (default: all). Exit status 0 when every selected criterion
// passes.

#include "oracles.hpp"
#include "pals/fit.hpp"
#include "pals/histogram_io.hpp"
#include "pals/hypothesis.hpp"
#include "pals/report.hpp"
#include "pals/spectrometer.hpp"
#include "pals/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;
using namespace pals;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("palslab_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PALSLAB_PATH) + " " + args + " > " + (workdir() / "stdout").string() +
                          " 2> " + (workdir() / "stderr").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const ParamId kRate2{ParamKind::rate, 2};

Outcome planck_identity() {
  const fs::path out = workdir() / "constants.txt";
  const int rc = run_cli("constants --out " + out.string());
  if (rc != 0) return {false, fmt("palslab constants exited with %d", rc)};
  const Report r = read_report(out);
  const double n3 = r.number("n3"), residual = r.number("residual");
  const double n3_dev = std::abs(n3 / 1.302e19 - 1.0);
  return {n3_dev <= 1e-3 && residual <= 2e-3,
          fmt("N3 = %.6e (%.2e from 1.302e19, limit 1e-3), residual %.3e (limit 2e-3)", n3, n3_dev, residual)};
}

Outcome convolution_oracle() {
  const InstrumentResponse irf{1.7, 25.0};
  double worst = 0.0;
  std::size_t points = 0;
  for (double rate : {7.04, 1.0}) {
    const DecayComponent c{rate, 1.0};
    for (double t : oracle::sample_points(irf, rate, 1000)) {
      const double ref = oracle::convolved_density(rate, irf, t);
      worst = std::max(worst, std::abs(eval_component(c, irf, t) - ref) / ref);
      ++points;
    }
  }
  return {worst <= 1e-6, fmt("max relative deviation %.3e over %zu points (limit 1e-6)", worst, points)};
}

Histogram simulate_events(SpectrometerConfig cfg, const AnomalyScenario& s, double n_events, RngSeed seed) {
  cfg.live_time = live_time_for_events(cfg, s, default_neon_model(), n_events);
  return simulate_spectrum(cfg, s, default_neon_model(), seed);
}

Outcome fit_recovery() {
  const double truth = default_neon_model().components[2].rate;
  SpectrometerConfig cfg;
  cfg.accidental_rate = 1000.0;
  const Histogram big = simulate_events(cfg, AnomalyScenario{}, 1e7, {3, 0});
  const FitResult f = fit_mle(big, make_fit_spec(big, default_neon_model()));
  const double z = (f.value(kRate2) - truth) / f.error(kRate2);
  const bool single_ok = f.converged && std::abs(z) <= 3.0;

  const std::size_t replicas = 200;
  cfg.live_time = live_time_for_events(cfg, AnomalyScenario{}, default_neon_model(), 1e6);
  std::vector<double> pulls;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < replicas; ++i) {
    const Histogram h = simulate_spectrum(cfg, AnomalyScenario{}, default_neon_model(), {31, i});
    const FitResult r = fit_mle(h, make_fit_spec(h, default_neon_model()));
    if (!r.converged || !(r.error(kRate2) > 0.0)) {
      ++failed;
      continue;
    }
    pulls.push_back((r.value(kRate2) - truth) / r.error(kRate2));
  }
  const auto m = stats::moments(pulls);
  const bool pulls_ok = failed == 0 && std::abs(m.mean) <= 0.1 && std::abs(m.stddev - 1.0) <= 0.15;
  return {single_ok && pulls_ok,
          fmt("1e7 events: rate_2 = %.5f +- %.5f 1/us (%.2f sigma from %.6f); %zu-replica pulls at 1e6: mean %.3f "
              "(limit +-0.1), sd %.3f (limit 1+-0.15), %zu failed fits",
              f.value(kRate2), f.error(kRate2), z, truth, replicas, m.mean, m.stddev, failed)};
}

Outcome doubling_experiment() {
  AnomalyScenario perp, par;
  perp.mode = par.mode = ExperimentMode::resonance;
  perp.doubling_transfer = par.doubling_transfer = 0.5;
  perp.field_orientation = FieldOrientation::perpendicular;
  par.field_orientation = FieldOrientation::parallel;
  const SpectrometerConfig cfg;
  const Histogram hp = simulate_events(cfg, perp, 1e6, {4, 0});
  const Histogram hq = simulate_events(cfg, par, 1e6, {4, 1});
  const TestResult t = lr_test_doubling(hp, hq, make_fit_spec(default_neon_model()));
  const Ratio q = doubling_ratio(t);
  const bool ok = t.valid && std::abs(q.value - 2.0) <= 0.05 && t.effective_sigma >= 5.0;
  return {ok, fmt("I2 parallel/perpendicular = %.4f +- %.4f (target 2.00 +- 0.05; measured %.2f +- %.2f), "
                  "likelihood ratio %.1f sigma (limit 5)",
                  q.value, q.error, perp.comparative_factor, perp.comparative_factor_error, t.effective_sigma)};
}

Outcome rate_shift_power() {
  PowerScanSpec alt;
  alt.test = PowerTest::rate_shift;
  alt.scenario.mode = ExperimentMode::nonresonance_lambda;
  alt.scenario.lambda_shift = 0.0019;
  alt.grid = {1e7, 2e7, 3e7, 4e7};
  alt.replicas = 50;
  alt.alpha = 2.0 * stats::normal_sf(3.0);
  alt.seed = 5;
  const PowerCurve curve = power_scan(alt);
  const auto first = curve.first_reaching(0.5);
  std::string table;
  for (const auto& p : curve.points)
    table += fmt(" N=%.0e: %.2f [%.2f, %.2f];", p.n_events, p.power, p.ci.low, p.ci.high);

  PowerScanSpec null = alt;
  null.scenario = AnomalyScenario{};
  null.grid = {1e6};
  null.replicas = 400;
  null.alpha = 0.05;
  null.seed = 6;
  const PowerPoint np = power_scan(null).points.at(0);
  const bool ok = first.has_value() && std::abs(np.power - 0.05) <= 0.02;
  const std::string min_n =
      first ? fmt("%.0e (power %.2f, 95%% CI [%.2f, %.2f])", curve.points[*first].n_events, curve.points[*first].power,
                  curve.points[*first].ci.low, curve.points[*first].ci.high)
            : std::string("none in grid");
  return {ok, fmt("delta 0.0019 at 3 sigma, %zu replicas:%s minimum N for 50%% power %s; null rejection at 0.05: "
                  "%zu/%zu = %.4f (limit 0.05 +- 0.02)",
                  alt.replicas, table.c_str(), min_n.c_str(), np.rejections, np.replicas, np.power)};
}

Outcome discriminator_contract() {
  const SpectrumModel model = default_neon_model();
  std::size_t events = 0, accepted = 0, outside = 0, pair_deposits = 0, start_in_window = 0;
  auto sweep = [&](const SpectrometerConfig& cfg, std::uint64_t n, std::uint64_t stream, bool accidentals) {
    const EventSampler sampler(cfg, model, {7, stream});
    for (std::uint64_t i = 0; i < n; ++i) {
      const EventRecord e = accidentals ? sampler.sample_accidental(i) : sampler.sample_event(i);
      ++events;
      if (!e.accepted) continue;
      ++accepted;
      if (!cfg.stop_window.contains(e.stop_energy_deposit)) ++outside;
      if (std::abs(e.stop_energy_deposit - 1.022) < 1e-9) ++pair_deposits;
      if (cfg.stop_window.contains(cfg.start_energy)) ++start_in_window;
    }
  };
  SpectrometerConfig wide;
  wide.deposit_2gamma = {1.022, 1.022};
  wide.deposit_3gamma = {0.0, 1.28};
  wide.deposit_prompt = {0.0, 1.28};
  SpectrometerConfig start_low;
  start_low.start_energy = 0.4;
  sweep(SpectrometerConfig{}, 400000, 0, false);
  sweep(wide, 400000, 1, false);
  sweep(start_low, 100000, 2, false);
  sweep(SpectrometerConfig{}, 100000, 3, true);
  const bool events_ok = events >= 1000000 && accepted > 0 && outside == 0 && pair_deposits == 0 &&
                         start_in_window == 0;

  SpectrometerConfig floor_cfg;
  floor_cfg.source_activity = 0.0;
  floor_cfg.accidental_rate = 2.0e4;
  floor_cfg.live_time = 2048.0;
  const Histogram h = simulate_spectrum(floor_cfg, AnomalyScenario{}, model, {7, 4});
  const double expected = floor_cfg.accidental_rate * floor_cfg.live_time / static_cast<double>(floor_cfg.n_channels);
  std::size_t beyond = 0;
  double sum = 0.0;
  for (auto c : h.counts) {
    sum += static_cast<double>(c);
    if (std::abs(static_cast<double>(c) - expected) > 3.0 * std::sqrt(expected)) ++beyond;
  }
  const double n = static_cast<double>(h.n_channels());
  const double mean_z = (sum / n - expected) / std::sqrt(expected / n);
  // Channels beyond 3 sigma: Binomial(n, 0.0027); allow its mean plus 4 sd.
  const double p3 = 2.0 * stats::normal_sf(3.0);
  const double beyond_limit = n * p3 + 4.0 * std::sqrt(n * p3 * (1.0 - p3));
  const bool floor_ok = std::abs(mean_z) <= 3.0 && static_cast<double>(beyond) <= beyond_limit;
  return {events_ok && floor_ok,
          fmt("%zu events, %zu accepted: %zu outside [%.2f, %.2f] MeV, %zu at 1.022 MeV, %zu with start in window; "
              "floor rT/n = %.1f: mean %.2f sigma, %zu/%zu channels beyond 3 sigma (limit %.1f)",
              events, accepted, outside, floor_cfg.stop_window.low, floor_cfg.stop_window.high, pair_deposits,
              start_in_window, expected, mean_z, beyond, h.n_channels(), beyond_limit)};
}

Outcome determinism() {
  const fs::path ini = workdir() / "determinism.ini";
  std::ofstream(ini) << "[run]\nseed = 20\n[spectrometer]\naccidental_rate = 1000\nlive_time = 20\n";
  const fs::path a = workdir() / "t1.hist", b = workdir() / "t8.hist";
  const int ra = run_cli("simulate --config " + ini.string() + " --threads 1 --out " + a.string());
  const int rb = run_cli("simulate --config " + ini.string() + " --threads 8 --out " + b.string());
  if (ra != 0 || rb != 0) return {false, fmt("palslab simulate exited with %d and %d", ra, rb)};
  const std::string x = slurp(a), y = slurp(b);
  const Histogram h = read_histogram(a);
  return {x == y && h.total() > 0, fmt("%zu-byte histograms with %llu counts are %s", x.size(),
                                       static_cast<unsigned long long>(h.total()), x == y ? "identical" : "different")};
}

Outcome gradient() {
  SpectrometerConfig cfg;
  cfg.accidental_rate = 1000.0;
  const Histogram h = simulate_events(cfg, AnomalyScenario{}, 1e6, {8, 0});
  FitSpec spec = make_fit_spec(h, default_neon_model());
  std::fill(spec.free.begin(), spec.free.end(), true);
  const GradientCheck g = gradient_check(spec, h);
  return {g.n_checked == spec.free.size() && g.max_deviation <= 1e-5,
          fmt("%zu parameters, max relative deviation %.3e at %s (limit 1e-5)", g.n_checked, g.max_deviation,
              g.worst_parameter.c_str())};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "planck identity", planck_identity},     {2, "convolution oracle", convolution_oracle},
      {3, "fit recovery", fit_recovery},           {4, "doubling experiment", doubling_experiment},
      {5, "rate-shift power", rate_shift_power},   {6, "discriminator contract", discriminator_contract},
      {7, "determinism", determinism},             {8, "gradient check", gradient},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  std::ofstream log("acceptance_results.txt");
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string line = "criterion " + std::to_string(c.id) + " (" + c.name + "): " + (o.pass ? "PASS" : "FAIL") +
                             " [" + fmt("%.1f", s) + " s] " + o.detail;
    std::cout << line << std::endl;
    log << line << std::endl;
    failures += o.pass ? 0 : 1;
  }
  std::error_code ec;
  fs::remove_all(workdir(), ec);
  return failures == 0 ? 0 : 1;
}
