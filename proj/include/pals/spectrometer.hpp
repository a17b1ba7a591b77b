#pragma once
// Monte Carlo model of a fast-slow start/stop lifetime spectrometer.
//
// A source decay emits the start quantum (1.28 MeV) and, after a delay drawn
// from the chosen annihilation channel, a stop quantum whose energy deposit
// must fall inside the stop window. Timing jitter is Gaussian. Random
// coincidences that survive the slow channel are simulated directly at a
// configured residual rate, uniformly over the time axis.

#include "pals/decay_model.hpp"
#include "pals/rng.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pals {

/// Closed energy interval in MeV. low == high is a single deposit value.
struct EnergyRange {
  double low = 0.0;
  double high = 0.0;

  bool contains(double e) const { return e >= low && e <= high; }
  double width() const { return high - low; }
};

struct SpectrometerConfig {
  double start_energy = 1.28;            // MeV
  EnergyRange stop_window{0.34, 0.51};   // MeV
  double timing_fwhm = 1.7;              // ns
  double slow_resolving_time = 1.0;      // us
  double accidental_rate = 0.0;          // accepted random coincidences per second
  double channel_width = 0.5;            // ns
  std::size_t n_channels = 4096;
  double live_time = 10.0;               // s
  double source_activity = 1.0e5;        // decays per second

  // Stop-detector deposit ranges per event type, sampled uniformly.
  EnergyRange deposit_2gamma{0.0, 0.511};  // p-Ps and free-positron annihilation
  EnergyRange deposit_3gamma{0.0, 0.511};  // o-Ps three-quantum annihilation
  EnergyRange deposit_prompt{0.0, 0.511};  // intensity transferred to t ~ 0

  ChannelGeometry geometry() const { return {channel_width, n_channels}; }
  /// Throws DomainError when an invariant is violated.
  void validate() const;
};

enum class ExperimentMode { standard_qed, resonance, nonresonance_lambda };
enum class FieldOrientation { none, perpendicular, parallel };

struct AnomalyScenario {
  ExperimentMode mode = ExperimentMode::standard_qed;
  FieldOrientation field_orientation = FieldOrientation::none;
  double doubling_transfer = 0.5;
  double lambda_shift = 0.0019;
  /// Measured parallel/perpendicular ratio, kept for reports only.
  double comparative_factor = 1.85;
  double comparative_factor_error = 0.1;

  void validate() const;
};

std::string to_string(ExperimentMode m);
std::string to_string(FieldOrientation o);
ExperimentMode parse_experiment_mode(const std::string& s);
FieldOrientation parse_field_orientation(const std::string& s);

enum class TrueChannel { pPs, free_positron, oPs, prompt_transfer, accidental };
std::string to_string(TrueChannel c);

struct EventRecord {
  TrueChannel true_channel = TrueChannel::pPs;
  double emission_delay = 0.0;  // ns after time zero
  double measured_delay = 0.0;  // ns on the analyzer time axis (includes t0)
  double stop_energy_deposit = 0.0;  // MeV
  bool accepted = false;
};

/// Fast-slow coincidence logic: the start deposit must clear the integral
/// discriminator above the stop window, the stop deposit must lie inside it.
bool coincidence_accepted(const SpectrometerConfig& cfg, double start_deposit, double stop_deposit);

/// Maps the standard three-component model onto the scenario's physics.
/// Requires exactly three components.
SpectrumModel apply_scenario(const SpectrumModel& base, const AnomalyScenario& s);

/// Per-event sampler for one (seed, stream). The model must be normalized
/// with three components; timing jitter uses cfg.timing_fwhm and time zero
/// is model.irf.t0.
class EventSampler {
 public:
  EventSampler(const SpectrometerConfig& cfg, const SpectrumModel& model, RngSeed seed);

  /// True (source) event with the given index. When `full` is false, the
  /// delay of rejected events is not sampled (left at zero).
  EventRecord sample_event(std::uint64_t index, bool full = true) const;
  /// Random coincidence with the given index.
  EventRecord sample_accidental(std::uint64_t index) const;

  /// Adds accepted true events [begin, end) to `counts` (one entry per
  /// channel). Same draws as sample_event, generated in vectorized batches.
  void accumulate_events(std::uint64_t begin, std::uint64_t end, std::span<std::uint64_t> counts) const;
  /// As above for random coincidences.
  void accumulate_accidentals(std::uint64_t begin, std::uint64_t end, std::span<std::uint64_t> counts) const;

 private:
  SpectrometerConfig cfg_;
  CounterRng rng_;
  double cumulative_[4];
  double rate_ns_[3];
  double dep_low_[4];
  double dep_width_[4];
  bool start_ok_;
  double sigma_;
  double t0_;
};

/// Convenience wrapper sampling a single full event.
EventRecord sample_event(const SpectrometerConfig& cfg, const SpectrumModel& model, RngSeed seed,
                         std::uint64_t index);

/// Histogram of one replica. The number of source decays is
/// Poisson(source_activity * live_time), accidentals Poisson(accidental_rate *
/// live_time). `threads` changes speed only. Throws DomainError when t0 lies
/// outside the channel range.
Histogram simulate_spectrum(const SpectrometerConfig& cfg, const AnomalyScenario& scenario,
                            const SpectrumModel& base, RngSeed seed, unsigned threads = 0);

/// Replicas with stream ids 0..n-1.
std::vector<Histogram> simulate_replicas(const SpectrometerConfig& cfg, const AnomalyScenario& scenario,
                                         const SpectrumModel& base, std::uint64_t seed,
                                         std::size_t n_replicas, unsigned threads = 0);

/// Sums counts and live time; keeps metadata entries shared by all inputs.
/// Throws DomainError on an empty list or mismatched geometry.
Histogram merge_histograms(std::span<const Histogram> hs);

/// Fraction of events of each type passing the stop window:
/// {2-gamma, 3-gamma, prompt}.
std::array<double, 3> window_acceptance(const SpectrometerConfig& cfg);

/// Expected histogram content of simulate_spectrum as a SpectrumModel:
/// acceptance-weighted intensities, accepted event count and accidental
/// background per channel.
SpectrumModel observed_model(const SpectrometerConfig& cfg, const AnomalyScenario& scenario,
                             const SpectrumModel& base);

}  // namespace pals
