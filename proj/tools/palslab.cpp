// palslab: batch front end for simulation, fitting, tests, power scans and
// constants checks.
//
// Exit codes: 0 success, 1 constants check failed, 2 configuration or input
// format error, 3 I/O error, 4 fit did not converge (report still written).

#include "pals/config.hpp"
#include "pals/errors.hpp"
#include "pals/histogram_io.hpp"
#include "pals/hypothesis.hpp"
#include "pals/kernels.hpp"
#include "pals/lattice.hpp"
#include "pals/parallel.hpp"
#include "pals/report.hpp"
#include "pals/spectrometer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace pals;

namespace {

constexpr int kOk = 0;
constexpr int kConstantsFail = 1;
constexpr int kInputError = 2;
constexpr int kIoError = 3;
constexpr int kNotConverged = 4;

const std::vector<std::string> kAllSections{"run",        "spectrometer", "model", "scenario", "fit",
                                            "experiment", "power",        "constants"};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string out;
};

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

Config load(const Globals& g, bool required) {
  if (g.config.empty()) {
    if (required) throw ConfigError("--config is required");
    return {};
  }
  Config c = load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

// Writes through a temporary file so that a failed run leaves no partial output.
template <typename Writer>
void write_file(const fs::path& path, Writer&& write) {
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    write(out);
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at " + path.string());
  }
}

void write_histogram_file(const Histogram& h, const fs::path& path) {
  write_file(path, [&](std::ostream& o) { write_histogram(h, o); });
}

void write_report_file(const Report& r, const fs::path& path) {
  write_file(path, [&](std::ostream& o) { write_report(r, o); });
}

// Deterministic part of the run manifest, embedded in every output file.
std::map<std::string, std::string> manifest(const std::string& command, const Config& c,
                                            const std::vector<std::string>& sections) {
  std::map<std::string, std::string> m;
  m["manifest.command"] = command;
  m["manifest.tool_version"] = PALS_VERSION;
  for (const auto& [k, v] : config_snapshot(c, sections)) m["config." + k] = v;
  return m;
}

void add_manifest(Report& r, const std::map<std::string, std::string>& m) {
  for (const auto& [k, v] : m) r.comment(k + "=" + v);
}

// Run-specific part: paths, thread count, wall-clock time.
void write_sidecar(const fs::path& path, const std::string& command, const Globals& g,
                   const std::vector<std::pair<std::string, std::string>>& files, const Clock& clock) {
  Report r;
  r.set("command", command);
  r.set("tool_version", std::string(PALS_VERSION));
  r.set("config", g.config.empty() ? std::string("none") : fs::absolute(g.config).string());
  for (const auto& [k, v] : files) r.set(k, fs::absolute(v).string());
  r.set("threads", static_cast<std::size_t>(resolve_threads(g.threads)));
  r.set("kernel_isa", std::string(kernels::isa_name(kernels::active_isa())));
  r.set("duration_s", clock.seconds());
  write_report_file(r, path);
}

fs::path sidecar_of(const fs::path& out) {
  fs::path p = out;
  p += ".manifest";
  return p;
}

int cmd_simulate(const Globals& g) {
  const Clock clock;
  const Config c = load(g, true);
  c.require("spectrometer");
  const fs::path out = require_out(g);
  Histogram h = simulate_spectrum(c.spectrometer, c.scenario, c.model, {c.seed, 0}, g.threads);
  for (const auto& [k, v] : manifest("simulate", c, {"run", "spectrometer", "model", "scenario"})) h.metadata[k] = v;
  write_histogram_file(h, out);
  write_sidecar(sidecar_of(out), "simulate", g, {{"output", out.string()}}, clock);
  std::cout << "wrote " << out.string() << ": " << h.total() << " counts in " << h.n_channels() << " channels\n";
  return kOk;
}

int cmd_fit(const Globals& g, const std::string& histogram_path, bool residuals) {
  const Clock clock;
  const Config c = load(g, false);
  const fs::path out = require_out(g);
  const Histogram h = read_histogram(fs::path(histogram_path));
  const FitSpec spec = build_fit_spec(c, h);
  const FitResult f = fit_mle(h, spec);
  Report r;
  add_manifest(r, manifest("fit", c, {"model", "fit"}));
  const auto seed = h.metadata.find("seed");
  r.set("histogram.seed", seed != h.metadata.end() ? seed->second : std::string("unspecified"));
  r.set("histogram.total_counts", static_cast<std::size_t>(h.total()));
  add_fit(r, f);
  if (residuals) add_residuals(r, h, f, spec);
  write_report_file(r, out);
  write_sidecar(sidecar_of(out), "fit", g, {{"histogram", histogram_path}, {"output", out.string()}}, clock);
  const ParamId rate2{ParamKind::rate, std::min<std::size_t>(2, f.model.components.size() - 1)};
  std::cout << "fit " << (f.converged ? "converged" : "did not converge") << " after " << f.n_iterations
            << " iterations; deviance " << f.deviance << " on " << f.degrees_of_freedom << " dof; "
            << rate2.name() << " = " << f.value(rate2) << " +- " << f.error(rate2) << " 1/us\n";
  if (!f.converged) {
    std::cerr << "palslab: fit did not converge: " << f.message << "\n";
    return kNotConverged;
  }
  return kOk;
}

int cmd_experiment(const Globals& g) {
  const Clock clock;
  const Config c = load(g, true);
  c.require("scenario", "mode");
  c.require("scenario", "field_orientation");
  const fs::path dir = require_out(g);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());

  const auto& e = c.experiment;
  Histogram geometry;
  geometry.channel_width = c.spectrometer.channel_width;
  geometry.counts.assign(c.spectrometer.n_channels, 0);
  const FitSpec tmpl = build_fit_spec(c, geometry);
  const auto m = manifest("experiment", c, kAllSections);
  Report r;
  add_manifest(r, m);
  r.set("experiment.test", to_string(e.test));
  r.set("experiment.n_events", e.n_events);
  std::vector<std::pair<std::string, std::string>> files;
  TestResult t;
  auto simulate = [&](const AnomalyScenario& s, std::uint64_t stream, const std::string& name) {
    SpectrometerConfig cfg = c.spectrometer;
    cfg.live_time = live_time_for_events(cfg, s, c.model, e.n_events);
    Histogram h = simulate_spectrum(cfg, s, c.model, {c.seed, stream}, g.threads);
    for (const auto& [k, v] : m) h.metadata[k] = v;
    const fs::path path = dir / name;
    write_histogram_file(h, path);
    files.emplace_back("histogram." + std::to_string(stream), path.string());
    return h;
  };
  if (e.test == PowerTest::doubling) {
    AnomalyScenario perp = c.scenario, par = c.scenario;
    perp.field_orientation = FieldOrientation::perpendicular;
    par.field_orientation = FieldOrientation::parallel;
    const Histogram hp = simulate(perp, 0, "histogram_perpendicular.txt");
    const Histogram hq = simulate(par, 1, "histogram_parallel.txt");
    t = lr_test_doubling(hp, hq, tmpl, e.significance);
    add_test(r, t);
    if (t.alt_fits.size() == 2) {
      add_fit(r, t.alt_fits[0], "fit.perpendicular.");
      add_fit(r, t.alt_fits[1], "fit.parallel.");
      const Ratio q = doubling_ratio(t);
      r.set("ratio.parallel_over_perpendicular", q.value);
      r.set("ratio.error", q.error);
      std::cout << "I2 parallel/perpendicular = " << q.value << " +- " << q.error << " (measured "
                << c.scenario.comparative_factor << " +- " << c.scenario.comparative_factor_error << ")\n";
    }
    r.set("ratio.measured", c.scenario.comparative_factor);
    r.set("ratio.measured_error", c.scenario.comparative_factor_error);
  } else {
    const double lambda_null = e.lambda_null.value_or(c.model.components.at(2).rate);
    const Histogram h = simulate(c.scenario, 0, "histogram.txt");
    t = lr_test_rate_shift(h, lambda_null, tmpl, e.significance);
    add_test(r, t);
    if (!t.alt_fits.empty()) add_fit(r, t.alt_fits[0], "fit.");
    r.set("rate.lambda_null", lambda_null);
  }
  const fs::path report = dir / "report.txt";
  write_report_file(r, report);
  files.emplace_back("report", report.string());
  write_sidecar(dir / "manifest.txt", "experiment", g, files, clock);
  std::cout << "statistic " << t.statistic << ", p = " << t.p_value << ", " << t.effective_sigma << " sigma: "
            << (t.reject ? "reject" : "fail to reject") << "\n";
  if (!t.valid) {
    std::cerr << "palslab: " << t.message << "\n";
    return kNotConverged;
  }
  return kOk;
}

int cmd_power(const Globals& g, const std::string& grid, std::optional<std::size_t> replicas) {
  const Clock clock;
  Config c = load(g, true);
  if (!grid.empty()) {
    c.power.grid.clear();
    for (const auto& x : split_list(grid)) {
      try {
        c.power.grid.push_back(std::stod(x));
      } catch (const std::exception&) {
        throw ConfigError("--grid entry '" + x + "' is not a number");
      }
    }
  }
  if (replicas) c.power.replicas = *replicas;
  if (c.power.replicas == 0) throw ConfigError("replicas must be >= 1");
  if (c.power.grid.empty()) throw ConfigError("power grid is empty");
  const fs::path out = require_out(g);
  PowerScanSpec s;
  s.test = c.power.test;
  s.cfg = c.spectrometer;
  s.base = c.model;
  s.scenario = c.scenario;
  s.grid = c.power.grid;
  s.replicas = c.power.replicas;
  s.alpha = c.power.alpha;
  s.seed = c.seed;
  s.threads = g.threads;
  PowerCurve curve;
  try {
    curve = power_scan(s);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  Report r;
  add_manifest(r, manifest("power", c, kAllSections));
  add_power(r, curve, c.power.target_power);
  write_report_file(r, out);
  write_sidecar(sidecar_of(out), "power", g, {{"output", out.string()}}, clock);
  for (const auto& p : curve.points)
    std::cout << "N = " << p.n_events << ": power " << p.power << " [" << p.ci.low << ", " << p.ci.high << "]\n";
  return kOk;
}

int cmd_constants(const Globals& g) {
  const Config c = load(g, false);
  try {
    c.constants.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  constexpr double kTolerance = 2e-3;
  const double n3 = n3_from_alpha(c.constants.alpha);
  const double mpl = planck_mass(c.constants);
  const double residual = planck_identity_residual(c.constants);
  const bool pass = residual <= kTolerance;
  Report r;
  add_manifest(r, manifest("constants", c, {"constants"}));
  r.set("n3", n3);
  r.set("planck_mass_g", mpl);
  r.set("n3_mass_sum_g", n3 * (c.constants.m_p + c.constants.m_e));
  r.set("residual", residual);
  r.set("tolerance", kTolerance);
  r.set("n_nucleus", LatticeModel{}.n_nucleus);
  r.set("result", std::string(pass ? "pass" : "fail"));
  write_report(r, std::cout);
  if (!g.out.empty()) write_report_file(r, g.out);
  return pass ? kOk : kConstantsFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifetime-spectrum simulation and analysis"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Configuration file (INI)");
  app.add_option("--seed", g.seed, "Master seed; overrides [run] seed");
  app.add_option("--threads", g.threads, "Worker threads, 0 = all cores; affects speed only");
  app.add_option("--out", g.out, "Output file (or directory for experiment)");

  auto* simulate = app.add_subcommand("simulate", "Simulate one histogram");
  auto* fit = app.add_subcommand("fit", "Fit a histogram");
  std::string histogram;
  bool residuals = false;
  fit->add_option("histogram", histogram, "Histogram file")->required();
  fit->add_flag("--residuals", residuals, "Append the per-channel residual table");
  auto* experiment = app.add_subcommand("experiment", "Run a paired or rate-shift experiment");
  auto* power = app.add_subcommand("power", "Monte Carlo power scan");
  std::string grid;
  std::optional<std::size_t> replicas;
  power->add_option("--grid", grid, "Comma-separated event counts; overrides [power] grid");
  power->add_option("--replicas", replicas, "Replicas per grid point; overrides [power] replicas");
  auto* constants = app.add_subcommand("constants", "Check the Planck-mass identity");
  for (auto* sub : {simulate, fit, experiment, power, constants}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (*simulate) return cmd_simulate(g);
    if (*fit) return cmd_fit(g, histogram, residuals);
    if (*experiment) return cmd_experiment(g);
    if (*power) return cmd_power(g, grid, replicas);
    if (*constants) return cmd_constants(g);
  } catch (const IoError& e) {
    std::cerr << "palslab: " << e.what() << "\n";
    return kIoError;
  } catch (const ConfigError& e) {
    std::cerr << "palslab: configuration error: " << e.what() << "\n";
    return kInputError;
  } catch (const FormatError& e) {
    std::cerr << "palslab: format error: " << e.what() << "\n";
    return kInputError;
  } catch (const DomainError& e) {
    std::cerr << "palslab: invalid input: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "palslab: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
