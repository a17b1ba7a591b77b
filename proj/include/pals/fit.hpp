#pragma once
// Poisson maximum-likelihood fits of the lifetime-spectrum model.
//
// The optimizer is a projected Levenberg-Marquardt iteration on the Poisson
// deviance with Marquardt (diagonal) damping, so results do not depend on the
// units chosen for the parameters. Intensities and the prompt fraction are
// kept on the simplex: one free weight is eliminated through the sum
// constraint (the currently largest, re-chosen every iteration) and the rest
// are bounded below by zero. Parameters that sit on a bound with the gradient
// pointing outward are frozen for that iteration.

#include "pals/decay_model.hpp"

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pals {

enum class Objective { poisson, least_squares };
enum class RateUnit { per_us, per_ns };

std::string to_string(Objective o);
std::string to_string(RateUnit u);

struct ParamBounds {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

struct FitSpec {
  /// Initial values; also supplies the values of fixed parameters.
  SpectrumModel initial;
  /// One entry per parameter of the packed vector (see pack_params).
  std::vector<bool> free;
  std::vector<ParamBounds> bounds;
  std::size_t max_iterations = 200;
  /// Relative deviance change between accepted steps.
  double convergence_tol = 1e-9;
  /// Newton decrement g^T H^-1 g, in units of half the deviance.
  double gradient_tol = 1e-6;
  /// Fitted channel range [first_channel, last_channel); last == 0 means all.
  std::size_t first_channel = 0;
  std::size_t last_channel = 0;
  /// least_squares minimizes sum (n - mu)^2 / max(n, 1); cross-checks only.
  Objective objective = Objective::poisson;
  /// Unit of the rate variables seen by the optimizer.
  RateUnit rate_unit = RateUnit::per_us;
  bool compute_covariance = true;

  std::size_t n_components() const { return initial.components.size(); }
  bool is_free(const ParamId& id) const;
  void set_free(const ParamId& id, bool f);
  ParamBounds& bound(const ParamId& id);
  const ParamBounds& bound(const ParamId& id) const;
  std::size_t n_free() const;
  /// Resolved channel range for a histogram with n_channels channels.
  std::pair<std::size_t, std::size_t> channel_range(std::size_t n_channels) const;
  /// Throws DomainError on inconsistent sizes, bounds or initial values.
  void validate(std::size_t n_channels) const;
};

/// rates > 0, weights in [0, 1], fwhm >= 1e-3 ns, background and total >= 0.
std::vector<ParamBounds> default_bounds(std::size_t n_components);

/// Every parameter free except the first component (rate_0, intensity_0): a
/// sub-nanosecond component and the prompt peak are nearly indistinguishable
/// under a 1.7 ns response, so only the prompt fraction absorbs t ~ 0 excess.
FitSpec make_fit_spec(const SpectrumModel& initial);

/// As above, with total_events and background_per_channel initialized from
/// the histogram. The background starts at (counts + 1/2) / channels over the
/// channels before t0 - 5 sigma, which stays positive for an empty window.
FitSpec make_fit_spec(const Histogram& h, const SpectrumModel& guess);

struct FitResult {
  SpectrumModel model;
  std::vector<double> params;
  /// Standard errors; zero for fixed parameters and those held on a bound.
  std::vector<double> errors;
  /// Row-major param_count x param_count covariance.
  std::vector<double> covariance;
  std::vector<bool> free;
  std::vector<bool> at_bound;
  Objective objective = Objective::poisson;
  /// Poisson deviance (or weighted sum of squares) over the fitted channels.
  double deviance = 0.0;
  /// sqrt of the Newton decrement at the final point.
  double gradient_norm = 0.0;
  std::size_t n_rows = 0;
  std::size_t degrees_of_freedom = 0;
  std::size_t n_iterations = 0;
  bool converged = false;
  bool singular = false;
  std::string message;
  /// Deviance after the initial evaluation and after every accepted step.
  std::vector<double> deviance_trace;

  double value(const ParamId& id) const;
  double error(const ParamId& id) const;
};

FitResult fit_mle(const Histogram& h, const FitSpec& spec);

/// Simultaneous fit of several histograms whose parameters are independent
/// except for the `shared` ones, which take a single common value.
struct JointFit {
  std::vector<FitResult> parts;
  double deviance = 0.0;
  std::size_t degrees_of_freedom = 0;
  std::size_t n_iterations = 0;
  bool converged = false;
  bool singular = false;
  std::string message;
  std::vector<double> deviance_trace;
};

JointFit fit_joint(std::span<const Histogram> hs, std::span<const FitSpec> specs,
                   const std::vector<ParamId>& shared);

/// Poisson deviance 2 sum [mu - n + n ln(n/mu)] over [first, last).
double poisson_deviance(const Histogram& h, const SpectrumModel& m, std::size_t first, std::size_t last);

struct BackgroundEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t n_channels = 0;
  /// No counts in the window: the estimate is zero with zero error.
  bool degenerate = false;
};

/// Mean counts per channel over [first, last), which must end before
/// t0 - 5 sigma. Throws DomainError on an empty or late window.
BackgroundEstimate estimate_background(const Histogram& h, std::size_t first, std::size_t last,
                                       const InstrumentResponse& irf);

/// Number of leading channels that end before t0 - 5 sigma.
std::size_t pre_t0_channels(const ChannelGeometry& g, const InstrumentResponse& irf);

struct GradientCheck {
  /// Max over free parameters of max_k |fd - analytic| / max_k |analytic|.
  double max_deviation = 0.0;
  std::string worst_parameter;
  std::size_t n_checked = 0;
  /// Per-parameter deviations, in packed order (zero for fixed parameters).
  std::vector<double> deviations;
};

/// Analytic Jacobian of the expected counts versus central differences at
/// the initial point of `spec`, over the spec's channel range of `h`.
GradientCheck gradient_check(const FitSpec& spec, const Histogram& h);

}  // namespace pals
