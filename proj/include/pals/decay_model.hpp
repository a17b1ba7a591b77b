#pragma once
// Lifetime-spectrum model: exponential annihilation components convolved with
// a Gaussian timing response, plus a prompt (t ~ 0) peak and a flat
// accidental background.
//
// Units: decay rates are stored in 1/us, times in ns.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pals {

inline constexpr double kNsPerUs = 1000.0;
/// FWHM / sigma for a Gaussian, 2 sqrt(2 ln 2).
inline constexpr double kFwhmPerSigma = 2.3548200450309493820;

/// 1/us -> 1/ns
constexpr double rate_per_ns(double rate_per_us) { return rate_per_us / kNsPerUs; }

/// One annihilation channel: rate in 1/us, intensity as an event fraction.
struct DecayComponent {
  double rate = 1.0;
  double intensity = 0.0;
};

/// Gaussian timing response. fwhm and t0 in ns.
struct InstrumentResponse {
  double fwhm = 1.7;
  double t0 = 0.0;

  double sigma() const { return fwhm / kFwhmPerSigma; }
};

struct ChannelGeometry {
  double channel_width = 0.5;  // ns
  std::size_t n_channels = 4096;

  double span() const { return channel_width * static_cast<double>(n_channels); }
  void validate() const;
};

struct SpectrumModel {
  std::vector<DecayComponent> components;
  InstrumentResponse irf;
  /// Fraction of true coincidences in the instantaneous peak at t0.
  double prompt_fraction = 0.0;
  double background_per_channel = 0.0;
  /// Expected number of true coincidence events (all of time, not only the
  /// histogram window).
  double total_events = 0.0;

  double weight_sum() const;
  /// Throws DomainError on non-finite values, rate <= 0, negative weights or
  /// weights not summing to one.
  void validate() const;
};

/// Time-delay histogram as produced by the multichannel analyzer.
struct Histogram {
  double channel_width = 0.5;  // ns
  std::vector<std::uint64_t> counts;
  double live_time = 0.0;  // s
  std::map<std::string, std::string> metadata;

  std::size_t n_channels() const { return counts.size(); }
  ChannelGeometry geometry() const { return {channel_width, counts.size()}; }
  std::uint64_t total() const;
};

/// Canonical three-component decay set (p-Ps, free positrons, o-Ps) used as
/// configuration defaults. Intensities 0.05 / 0.65 / 0.30 are not measured
/// values for neon.
SpectrumModel default_neon_model();

/// Density (1/ns) of one component at time t (ns): the exponentially
/// modified Gaussian I*lambda/2 * exp(lambda^2 sigma^2/2 - lambda (t-t0))
/// * erfc((lambda sigma^2 - (t-t0)) / (sigma sqrt2)). For fwhm == 0 this is
/// the bare exponential starting at t0.
double eval_component(const DecayComponent& c, const InstrumentResponse& irf, double t);

/// Fraction of a unit-intensity component (or of the prompt peak when
/// rate == 0) falling in [a, b] ns.
double component_integral(double rate, const InstrumentResponse& irf, double a, double b);

/// Expected counts per channel: channel integrals of every component and of
/// the prompt Gaussian, scaled by total_events, plus background.
std::vector<double> expected_counts(const SpectrumModel& m, const ChannelGeometry& geometry);

/// Mean lifetime 1/rate, in ns.
double mean_lifetime(const DecayComponent& c);

// ---------------------------------------------------------------------------
// Parameter vector used by the fitter. Layout for n components:
//   [rate_0..rate_{n-1}, intensity_0..intensity_{n-1}, prompt_fraction,
//    t0, fwhm, background, total_events]

enum class ParamKind { rate, intensity, prompt_fraction, t0, fwhm, background, total_events };

struct ParamId {
  ParamKind kind;
  std::size_t component = 0;

  std::string name() const;
  friend bool operator==(const ParamId&, const ParamId&) = default;
};

std::size_t param_count(std::size_t n_components);
std::size_t param_index(const ParamId& id, std::size_t n_components);
ParamId param_at(std::size_t index, std::size_t n_components);
/// Parses "rate_2", "intensity_0", "prompt_fraction", "t0", ...
ParamId parse_param_name(const std::string& name, std::size_t n_components);

std::vector<double> pack_params(const SpectrumModel& m);
SpectrumModel unpack_params(const std::vector<double>& p, std::size_t n_components);

/// Expected counts over channels [first, last) together with their
/// derivatives with respect to every entry of the parameter vector.
struct ModelEvaluation {
  std::size_t first_channel = 0;
  std::size_t n_rows = 0;
  std::vector<double> expected;  // n_rows
  /// Column-major: derivative with respect to parameter p at jacobian[p*n_rows + k].
  std::vector<double> jacobian;

  const double* column(std::size_t p) const { return jacobian.data() + p * n_rows; }
};

/// Evaluates expected counts (and optionally the Jacobian) over a channel
/// window. Uses the dispatched SIMD kernels.
ModelEvaluation evaluate_model(const SpectrumModel& m, const ChannelGeometry& geometry,
                               std::size_t first_channel, std::size_t last_channel,
                               bool with_jacobian);

}  // namespace pals
