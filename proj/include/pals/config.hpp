#pragma once
// Shared INI run configuration.
//
//   [run]           seed
//   [spectrometer]  start_energy, stop_window = low, high, timing_fwhm,
//                   slow_resolving_time, accidental_rate, channel_width,
//                   n_channels, live_time, source_activity,
//                   deposit_2gamma / deposit_3gamma / deposit_prompt = low, high
//   [model]         components, rate_<i>, intensity_<i>, prompt_fraction, t0,
//                   fwhm, background, total_events
//   [scenario]      mode, field_orientation, doubling_transfer, lambda_shift,
//                   comparative_factor, comparative_factor_error
//   [fit]           free = names | fixed = names, bound.<name> = low, high,
//                   first_channel, last_channel, max_iterations,
//                   convergence_tol, gradient_tol, objective, rate_unit,
//                   covariance, init_from_data
//   [experiment]    test, n_events, lambda_null, significance
//   [power]         test, grid = N1, N2, ..., replicas, alpha, target_power
//   [constants]     alpha, m_p, m_e, hbar, c, G
//
// Unknown sections or keys, duplicates and malformed values raise ConfigError.

#include "pals/fit.hpp"
#include "pals/hypothesis.hpp"
#include "pals/lattice.hpp"
#include "pals/spectrometer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pals {

struct FitOptions {
  /// When set, exactly these parameters are free.
  std::optional<std::vector<std::string>> free;
  /// Parameters fixed on top of the defaults.
  std::vector<std::string> fixed;
  std::map<std::string, ParamBounds> bounds;
  std::size_t first_channel = 0;
  std::size_t last_channel = 0;
  std::size_t max_iterations = 200;
  double convergence_tol = 1e-9;
  double gradient_tol = 1e-6;
  Objective objective = Objective::poisson;
  RateUnit rate_unit = RateUnit::per_us;
  bool covariance = true;
  /// Start total_events and background from the histogram.
  bool init_from_data = true;
};

struct ExperimentOptions {
  PowerTest test = PowerTest::doubling;
  /// Expected accepted true events per histogram.
  double n_events = 1.0e6;
  /// Rate-shift null value; defaults to the model's rate_2.
  std::optional<double> lambda_null;
  double significance = 0.05;
};

struct PowerOptions {
  PowerTest test = PowerTest::rate_shift;
  std::vector<double> grid;
  std::size_t replicas = 100;
  double alpha = 0.05;
  double target_power = 0.5;
};

struct Config {
  std::uint64_t seed = 1;
  SpectrometerConfig spectrometer;
  SpectrumModel model = default_neon_model();
  AnomalyScenario scenario;
  FitOptions fit;
  ExperimentOptions experiment;
  PowerOptions power;
  PhysicalConstants constants;
  /// "section" and "section.key" for every entry present in the input.
  std::set<std::string> present;

  bool has(const std::string& section) const { return present.count(section) > 0; }
  bool has(const std::string& section, const std::string& key) const {
    return present.count(section + "." + key) > 0;
  }
  /// Throw ConfigError naming the missing section or key.
  void require(const std::string& section) const;
  void require(const std::string& section, const std::string& key) const;
};

Config parse_config(std::istream& in);
/// Throws IoError when the file cannot be read.
Config load_config(const std::filesystem::path& path);

/// Resolved values of the given sections as "section.key" -> canonical text,
/// suitable for re-parsing and for output headers.
std::map<std::string, std::string> config_snapshot(const Config& c, const std::vector<std::string>& sections);

/// Fit specification for histogram `h` from [model] and [fit].
FitSpec build_fit_spec(const Config& c, const Histogram& h);

std::vector<std::string> split_list(const std::string& s);

}  // namespace pals
