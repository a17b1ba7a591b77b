#include "pals/decay_model.hpp"

#include "pals/errors.hpp"
#include "pals/kernels.hpp"

#include <cmath>
#include <numeric>
#include <span>

namespace pals {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string(what) + " is not finite");
}

// Edge terms at a set of times x = t - t0 for one sigma. For sigma == 0 the
// Gaussian degenerates to a step at x = 0.
struct EdgeTerms {
  std::vector<double> x, lower, upper, pdf;

  EdgeTerms(std::vector<double> xs, double sigma, bool use_scalar)
      : x(std::move(xs)), lower(x.size()), upper(x.size()), pdf(x.size()) {
    if (sigma > 0.0) {
      if (use_scalar)
        kernels::scalar::gauss_edge_terms(x, sigma, lower, upper, pdf);
      else
        kernels::gauss_edge_terms(x, sigma, lower, upper, pdf);
    } else {
      for (std::size_t j = 0; j < x.size(); ++j) {
        lower[j] = x[j] >= 0.0 ? 1.0 : 0.0;
        upper[j] = 1.0 - lower[j];
        pdf[j] = 0.0;
      }
    }
  }

  void excess(double sigma, double lambda, std::vector<double>& out, bool use_scalar) const {
    out.resize(x.size());
    if (sigma > 0.0) {
      if (use_scalar)
        kernels::scalar::emg_excess(x, pdf, sigma, lambda, out);
      else
        kernels::emg_excess(x, pdf, sigma, lambda, out);
    } else {
      for (std::size_t j = 0; j < x.size(); ++j)
        out[j] = x[j] >= 0.0 ? std::exp(-lambda * x[j]) : 0.0;
    }
  }
};

}  // namespace

void ChannelGeometry::validate() const {
  if (n_channels == 0) throw DomainError("histogram geometry has zero channels");
  if (!(channel_width > 0.0) || !std::isfinite(channel_width))
    throw DomainError("channel width must be positive and finite");
}

double SpectrumModel::weight_sum() const {
  double s = prompt_fraction;
  for (const auto& c : components) s += c.intensity;
  return s;
}

void SpectrumModel::validate() const {
  for (const auto& c : components) {
    require_finite(c.rate, "component rate");
    require_finite(c.intensity, "component intensity");
    if (!(c.rate > 0.0)) throw DomainError("component rate must be > 0");
    if (c.intensity < 0.0) throw DomainError("component intensity must be >= 0");
  }
  require_finite(irf.fwhm, "irf fwhm");
  require_finite(irf.t0, "irf t0");
  require_finite(prompt_fraction, "prompt fraction");
  require_finite(background_per_channel, "background");
  require_finite(total_events, "total events");
  if (irf.fwhm < 0.0) throw DomainError("irf fwhm must be >= 0");
  if (prompt_fraction < 0.0 || prompt_fraction > 1.0)
    throw DomainError("prompt fraction must lie in [0, 1]");
  if (background_per_channel < 0.0) throw DomainError("background must be >= 0");
  if (total_events < 0.0) throw DomainError("total events must be >= 0");
  if (std::abs(weight_sum() - 1.0) > 1e-9)
    throw DomainError("component intensities plus prompt fraction must sum to 1");
}

std::uint64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

SpectrumModel default_neon_model() {
  SpectrumModel m;
  m.components = {{8000.0, 0.05}, {40.0, 0.65}, {7.039979, 0.30}};
  m.irf = {1.7, 25.0};
  m.prompt_fraction = 0.0;
  m.background_per_channel = 0.0;
  m.total_events = 1.0e6;
  return m;
}

double eval_component(const DecayComponent& c, const InstrumentResponse& irf, double t) {
  require_finite(t, "time");
  require_finite(c.rate, "component rate");
  require_finite(c.intensity, "component intensity");
  require_finite(irf.fwhm, "irf fwhm");
  require_finite(irf.t0, "irf t0");
  if (!(c.rate > 0.0)) throw DomainError("component rate must be > 0");
  if (irf.fwhm < 0.0) throw DomainError("irf fwhm must be >= 0");

  const double lambda = rate_per_ns(c.rate);
  EdgeTerms terms({t - irf.t0}, irf.sigma(), true);
  std::vector<double> e;
  terms.excess(irf.sigma(), lambda, e, true);
  return c.intensity * lambda * e[0];
}

double component_integral(double rate, const InstrumentResponse& irf, double a, double b) {
  require_finite(a, "interval start");
  require_finite(b, "interval end");
  const double sigma = irf.sigma();
  EdgeTerms terms({a - irf.t0, b - irf.t0}, sigma, true);
  std::vector<double> e(2, 0.0);
  if (rate > 0.0) terms.excess(sigma, rate_per_ns(rate), e, true);
  const double mid = 0.5 * (a + b) - irf.t0;
  if (mid < 0.0) return (terms.lower[1] - e[1]) - (terms.lower[0] - e[0]);
  return (terms.upper[0] + e[0]) - (terms.upper[1] + e[1]);
}

std::vector<double> expected_counts(const SpectrumModel& m, const ChannelGeometry& geometry) {
  geometry.validate();
  m.validate();
  return evaluate_model(m, geometry, 0, geometry.n_channels, false).expected;
}

double mean_lifetime(const DecayComponent& c) {
  if (!(c.rate > 0.0)) throw DomainError("component rate must be > 0");
  return kNsPerUs / c.rate;
}

// ---------------------------------------------------------------------------

std::string ParamId::name() const {
  switch (kind) {
    case ParamKind::rate:
      return "rate_" + std::to_string(component);
    case ParamKind::intensity:
      return "intensity_" + std::to_string(component);
    case ParamKind::prompt_fraction:
      return "prompt_fraction";
    case ParamKind::t0:
      return "t0";
    case ParamKind::fwhm:
      return "fwhm";
    case ParamKind::background:
      return "background";
    case ParamKind::total_events:
      return "total_events";
  }
  return "?";
}

std::size_t param_count(std::size_t n) { return 2 * n + 5; }

std::size_t param_index(const ParamId& id, std::size_t n) {
  switch (id.kind) {
    case ParamKind::rate:
      return id.component;
    case ParamKind::intensity:
      return n + id.component;
    case ParamKind::prompt_fraction:
      return 2 * n;
    case ParamKind::t0:
      return 2 * n + 1;
    case ParamKind::fwhm:
      return 2 * n + 2;
    case ParamKind::background:
      return 2 * n + 3;
    case ParamKind::total_events:
      return 2 * n + 4;
  }
  return 0;
}

ParamId param_at(std::size_t i, std::size_t n) {
  if (i < n) return {ParamKind::rate, i};
  if (i < 2 * n) return {ParamKind::intensity, i - n};
  constexpr ParamKind tail[] = {ParamKind::prompt_fraction, ParamKind::t0, ParamKind::fwhm,
                                ParamKind::background, ParamKind::total_events};
  if (i < 2 * n + 5) return {tail[i - 2 * n], 0};
  throw DomainError("parameter index out of range");
}

ParamId parse_param_name(const std::string& name, std::size_t n) {
  for (std::size_t i = 0; i < param_count(n); ++i) {
    const ParamId id = param_at(i, n);
    if (id.name() == name) return id;
  }
  throw DomainError("unknown parameter '" + name + "'");
}

std::vector<double> pack_params(const SpectrumModel& m) {
  const std::size_t n = m.components.size();
  std::vector<double> p(param_count(n));
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = m.components[i].rate;
    p[n + i] = m.components[i].intensity;
  }
  p[2 * n] = m.prompt_fraction;
  p[2 * n + 1] = m.irf.t0;
  p[2 * n + 2] = m.irf.fwhm;
  p[2 * n + 3] = m.background_per_channel;
  p[2 * n + 4] = m.total_events;
  return p;
}

SpectrumModel unpack_params(const std::vector<double>& p, std::size_t n) {
  if (p.size() != param_count(n)) throw DomainError("parameter vector has wrong length");
  SpectrumModel m;
  m.components.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.components[i] = {p[i], p[n + i]};
  m.prompt_fraction = p[2 * n];
  m.irf = {p[2 * n + 2], p[2 * n + 1]};
  m.background_per_channel = p[2 * n + 3];
  m.total_events = p[2 * n + 4];
  return m;
}

ModelEvaluation evaluate_model(const SpectrumModel& m, const ChannelGeometry& geometry,
                               std::size_t first, std::size_t last, bool with_jacobian) {
  geometry.validate();
  if (first >= last || last > geometry.n_channels)
    throw DomainError("channel window is empty or exceeds the histogram");
  for (const auto& c : m.components) {
    require_finite(c.rate, "component rate");
    require_finite(c.intensity, "component intensity");
    if (!(c.rate > 0.0)) throw DomainError("component rate must be > 0");
  }
  require_finite(m.irf.fwhm, "irf fwhm");
  require_finite(m.irf.t0, "irf t0");
  if (m.irf.fwhm < 0.0) throw DomainError("irf fwhm must be >= 0");

  const std::size_t n = m.components.size();
  const std::size_t rows = last - first;
  const double w = geometry.channel_width;
  const double t0 = m.irf.t0;
  const double sigma = m.irf.sigma();
  const double total = m.total_events;

  std::vector<double> xs(rows + 1);
  for (std::size_t j = 0; j <= rows; ++j) xs[j] = static_cast<double>(first + j) * w - t0;
  const EdgeTerms terms(std::move(xs), sigma, false);
  const auto& x = terms.x;

  // Channel k uses the lower-tail difference when it lies before t0 and the
  // upper-tail difference otherwise; each avoids cancellation on its side.
  std::vector<bool> use_lower(rows);
  for (std::size_t k = 0; k < rows; ++k) use_lower[k] = 0.5 * (x[k] + x[k + 1]) < 0.0;

  ModelEvaluation ev;
  ev.first_channel = first;
  ev.n_rows = rows;
  ev.expected.assign(rows, 0.0);
  const std::size_t np = param_count(n);
  if (with_jacobian) ev.jacobian.assign(np * rows, 0.0);
  auto col = [&](std::size_t p) { return ev.jacobian.data() + p * rows; };

  const std::size_t i_prompt = 2 * n, i_t0 = 2 * n + 1, i_fwhm = 2 * n + 2, i_bkg = 2 * n + 3,
                    i_total = 2 * n + 4;

  // Unit-intensity shape of every component, summed with weights.
  std::vector<double> shape(rows, 0.0);
  std::vector<double> e;
  std::vector<double> unit(rows);
  for (std::size_t i = 0; i < n; ++i) {
    const double lambda = rate_per_ns(m.components[i].rate);
    const double intensity = m.components[i].intensity;
    terms.excess(sigma, lambda, e, false);
    for (std::size_t k = 0; k < rows; ++k) {
      unit[k] = use_lower[k] ? (terms.lower[k + 1] - e[k + 1]) - (terms.lower[k] - e[k])
                             : (terms.upper[k] + e[k]) - (terms.upper[k + 1] + e[k + 1]);
      shape[k] += intensity * unit[k];
    }
    if (!with_jacobian) continue;

    double* c_rate = col(i);
    double* c_int = col(n + i);
    double* c_t0 = col(i_t0);
    double* c_fwhm = col(i_fwhm);
    const double s2 = sigma * sigma;
    const double amp = total * intensity;
    for (std::size_t k = 0; k < rows; ++k) {
      // d(upper tail + E)/d(lambda, t0, sigma) at both edges
      const double dl_a = -(x[k] - lambda * s2) * e[k] - sigma * terms.pdf[k];
      const double dl_b = -(x[k + 1] - lambda * s2) * e[k + 1] - sigma * terms.pdf[k + 1];
      const double dt_a = lambda * e[k];
      const double dt_b = lambda * e[k + 1];
      const double ds_a = -lambda * terms.pdf[k] + lambda * lambda * sigma * e[k];
      const double ds_b = -lambda * terms.pdf[k + 1] + lambda * lambda * sigma * e[k + 1];
      c_rate[k] = amp * (dl_a - dl_b) / kNsPerUs;
      c_int[k] = total * unit[k];
      c_t0[k] += amp * (dt_a - dt_b);
      c_fwhm[k] += amp * (ds_a - ds_b) / kFwhmPerSigma;
    }
  }

  // Prompt peak: pure Gaussian at t0.
  std::vector<double> prompt(rows);
  for (std::size_t k = 0; k < rows; ++k)
    prompt[k] = use_lower[k] ? terms.lower[k + 1] - terms.lower[k]
                             : terms.upper[k] - terms.upper[k + 1];

  const double pf = m.prompt_fraction;
  for (std::size_t k = 0; k < rows; ++k)
    ev.expected[k] = total * (shape[k] + pf * prompt[k]) + m.background_per_channel;

  if (with_jacobian) {
    double* c_prompt = col(i_prompt);
    double* c_t0 = col(i_t0);
    double* c_fwhm = col(i_fwhm);
    double* c_bkg = col(i_bkg);
    double* c_total = col(i_total);
    const double amp = total * pf;
    for (std::size_t k = 0; k < rows; ++k) {
      c_prompt[k] = total * prompt[k];
      if (sigma > 0.0) {
        c_t0[k] += amp * (terms.pdf[k] - terms.pdf[k + 1]) / sigma;
        c_fwhm[k] += amp * (terms.pdf[k] * x[k] - terms.pdf[k + 1] * x[k + 1]) / (sigma * sigma) /
                     kFwhmPerSigma;
      }
      c_bkg[k] = 1.0;
      c_total[k] = shape[k] + pf * prompt[k];
    }
  }
  return ev;
}

}  // namespace pals
