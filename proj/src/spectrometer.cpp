#include "pals/spectrometer.hpp"

#include "pals/errors.hpp"
#include "pals/histogram_io.hpp"
#include "pals/kernels.hpp"
#include "pals/parallel.hpp"

#include <boost/random/poisson_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pals {

namespace {

constexpr std::uint64_t kChunk = std::uint64_t{1} << 16;
constexpr std::size_t kBatch = 2048;

// Philox blocks for the counters (domain, idx[i], sub), i < n.
struct PhiloxBatch {
  std::array<std::uint32_t, kBatch> c0, c1, c2, c3, o0, o1, o2, o3;

  void run(const CounterRng& rng, RngDomain domain, const std::uint64_t* idx, std::size_t n, std::uint32_t sub) {
    if (n == 0) return;
    const auto proto = rng.counter(domain, idx[n - 1], sub);
    const std::uint32_t tag = proto[1] & 0xFFFF0000u;
    for (std::size_t i = 0; i < n; ++i) {
      c0[i] = static_cast<std::uint32_t>(idx[i]);
      c1[i] = static_cast<std::uint32_t>(idx[i] >> 32) | tag;
      c2[i] = proto[2];
      c3[i] = proto[3];
    }
    kernels::philox4x32_10(rng.key()[0], rng.key()[1], {c0.data(), c1.data(), c2.data(), c3.data()},
                           {o0.data(), o1.data(), o2.data(), o3.data()}, n);
  }
  double first(std::size_t i) const { return to_open01(o0[i], o1[i]); }
  double second(std::size_t i) const { return to_open01(o2[i], o3[i]); }
};

void require(bool ok, const std::string& what) {
  if (!ok) throw DomainError(what);
}

bool finite_range(const EnergyRange& r) {
  return std::isfinite(r.low) && std::isfinite(r.high) && r.low >= 0.0 && r.high >= r.low;
}

double range_acceptance(const EnergyRange& deposit, const EnergyRange& window) {
  if (deposit.width() == 0.0) return window.contains(deposit.low) ? 1.0 : 0.0;
  const double lo = std::max(deposit.low, window.low);
  const double hi = std::min(deposit.high, window.high);
  return hi > lo ? (hi - lo) / deposit.width() : 0.0;
}

std::uint64_t poisson_count(const CounterRng& rng, std::uint64_t slot, double mean) {
  if (!(mean > 0.0)) return 0;
  CounterEngine engine(rng, RngDomain::counts, slot);
  boost::random::poisson_distribution<std::uint64_t, double> dist(mean);
  return dist(engine);
}

void put(std::map<std::string, std::string>& md, const std::string& key, double v) {
  md[key] = format_double(v);
}

void put_range(std::map<std::string, std::string>& md, const std::string& key, const EnergyRange& r) {
  md[key] = format_double(r.low) + "," + format_double(r.high);
}

std::map<std::string, std::string> describe(const SpectrometerConfig& cfg, const AnomalyScenario& s,
                                            const SpectrumModel& base, RngSeed seed) {
  std::map<std::string, std::string> md;
  md["seed"] = std::to_string(seed.seed);
  md["stream"] = std::to_string(seed.stream_id);
  put(md, "spectrometer.start_energy", cfg.start_energy);
  put_range(md, "spectrometer.stop_window", cfg.stop_window);
  put(md, "spectrometer.timing_fwhm", cfg.timing_fwhm);
  put(md, "spectrometer.slow_resolving_time", cfg.slow_resolving_time);
  put(md, "spectrometer.accidental_rate", cfg.accidental_rate);
  put(md, "spectrometer.source_activity", cfg.source_activity);
  put_range(md, "spectrometer.deposit_2gamma", cfg.deposit_2gamma);
  put_range(md, "spectrometer.deposit_3gamma", cfg.deposit_3gamma);
  put_range(md, "spectrometer.deposit_prompt", cfg.deposit_prompt);
  md["scenario.mode"] = to_string(s.mode);
  md["scenario.field_orientation"] = to_string(s.field_orientation);
  put(md, "scenario.doubling_transfer", s.doubling_transfer);
  put(md, "scenario.lambda_shift", s.lambda_shift);
  put(md, "scenario.comparative_factor", s.comparative_factor);
  for (std::size_t i = 0; i < base.components.size(); ++i) {
    put(md, "model.rate_" + std::to_string(i), base.components[i].rate);
    put(md, "model.intensity_" + std::to_string(i), base.components[i].intensity);
  }
  put(md, "model.prompt_fraction", base.prompt_fraction);
  put(md, "model.t0", base.irf.t0);
  return md;
}

}  // namespace

void SpectrometerConfig::validate() const {
  require(std::isfinite(start_energy) && start_energy > 0.0, "start_energy must be > 0");
  require(std::isfinite(stop_window.low) && std::isfinite(stop_window.high) && stop_window.low > 0.0 &&
              stop_window.high > stop_window.low,
          "stop_window requires 0 < low < high");
  require(start_energy > stop_window.high, "start_energy must lie above the stop window");
  require(std::isfinite(timing_fwhm) && timing_fwhm >= 0.0, "timing_fwhm must be >= 0");
  require(std::isfinite(slow_resolving_time) && slow_resolving_time > 0.0, "slow_resolving_time must be > 0");
  require(std::isfinite(accidental_rate) && accidental_rate >= 0.0, "accidental_rate must be >= 0");
  require(std::isfinite(live_time) && live_time >= 0.0, "live_time must be >= 0");
  require(std::isfinite(source_activity) && source_activity >= 0.0, "source_activity must be >= 0");
  require(finite_range(deposit_2gamma), "deposit_2gamma must satisfy 0 <= low <= high");
  require(finite_range(deposit_3gamma), "deposit_3gamma must satisfy 0 <= low <= high");
  require(finite_range(deposit_prompt), "deposit_prompt must satisfy 0 <= low <= high");
  geometry().validate();
}

void AnomalyScenario::validate() const {
  require(std::isfinite(doubling_transfer) && doubling_transfer >= 0.0 && doubling_transfer <= 1.0,
          "doubling_transfer must lie in [0, 1]");
  require(std::isfinite(lambda_shift) && lambda_shift >= 0.0, "lambda_shift must be >= 0");
}

std::string to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::standard_qed: return "standard_qed";
    case ExperimentMode::resonance: return "resonance";
    case ExperimentMode::nonresonance_lambda: return "nonresonance_lambda";
  }
  return "?";
}

std::string to_string(FieldOrientation o) {
  switch (o) {
    case FieldOrientation::none: return "none";
    case FieldOrientation::perpendicular: return "perpendicular";
    case FieldOrientation::parallel: return "parallel";
  }
  return "?";
}

std::string to_string(TrueChannel c) {
  switch (c) {
    case TrueChannel::pPs: return "pPs";
    case TrueChannel::free_positron: return "free_positron";
    case TrueChannel::oPs: return "oPs";
    case TrueChannel::prompt_transfer: return "prompt_transfer";
    case TrueChannel::accidental: return "accidental";
  }
  return "?";
}

ExperimentMode parse_experiment_mode(const std::string& s) {
  for (auto m : {ExperimentMode::standard_qed, ExperimentMode::resonance, ExperimentMode::nonresonance_lambda})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown experiment mode '" + s + "'");
}

FieldOrientation parse_field_orientation(const std::string& s) {
  for (auto o : {FieldOrientation::none, FieldOrientation::perpendicular, FieldOrientation::parallel})
    if (s == to_string(o)) return o;
  throw ConfigError("unknown field orientation '" + s + "'");
}

bool coincidence_accepted(const SpectrometerConfig& cfg, double start_deposit, double stop_deposit) {
  return start_deposit > cfg.stop_window.high && cfg.stop_window.contains(stop_deposit);
}

SpectrumModel apply_scenario(const SpectrumModel& base, const AnomalyScenario& s) {
  if (base.components.size() != 3)
    throw DomainError("scenario requires exactly three components, got " + std::to_string(base.components.size()));
  s.validate();
  SpectrumModel m = base;
  const bool active = s.field_orientation != FieldOrientation::parallel;
  switch (s.mode) {
    case ExperimentMode::standard_qed:
      break;
    case ExperimentMode::resonance:
      if (active) {
        const double moved = s.doubling_transfer * m.components[2].intensity;
        m.components[2].intensity -= moved;
        m.prompt_fraction += moved;
      }
      break;
    case ExperimentMode::nonresonance_lambda:
      if (active) m.components[2].rate *= 1.0 + s.lambda_shift;
      break;
  }
  return m;
}

EventSampler::EventSampler(const SpectrometerConfig& cfg, const SpectrumModel& model, RngSeed seed)
    : cfg_(cfg), rng_(seed), sigma_(cfg.timing_fwhm / kFwhmPerSigma), t0_(model.irf.t0) {
  if (model.components.size() != 3) throw DomainError("event sampler requires three components");
  model.validate();
  const double w[4] = {model.components[0].intensity, model.components[1].intensity,
                       model.components[2].intensity, model.prompt_fraction};
  const double total = w[0] + w[1] + w[2] + w[3];
  double acc = 0.0;
  for (int c = 0; c < 4; ++c) {
    acc += w[c] / total;
    cumulative_[c] = acc;
  }
  cumulative_[3] = 1.0;
  for (int c = 0; c < 3; ++c) rate_ns_[c] = rate_per_ns(model.components[c].rate);
  const EnergyRange* dep[4] = {&cfg.deposit_2gamma, &cfg.deposit_2gamma, &cfg.deposit_3gamma, &cfg.deposit_prompt};
  for (int c = 0; c < 4; ++c) {
    dep_low_[c] = dep[c]->low;
    dep_width_[c] = dep[c]->width();
  }
  start_ok_ = cfg.start_energy > cfg.stop_window.high;
}

EventRecord EventSampler::sample_event(std::uint64_t index, bool full) const {
  const auto u0 = rng_.uniforms(RngDomain::true_events, index, 0);
  int c = 0;
  while (c < 3 && u0[0] >= cumulative_[c]) ++c;
  EventRecord ev;
  ev.true_channel = static_cast<TrueChannel>(c);
  const EnergyRange& dep = c == 2 ? cfg_.deposit_3gamma : c == 3 ? cfg_.deposit_prompt : cfg_.deposit_2gamma;
  ev.stop_energy_deposit = dep.low + u0[1] * dep.width();
  ev.accepted = coincidence_accepted(cfg_, cfg_.start_energy, ev.stop_energy_deposit);
  if (!ev.accepted && !full) return ev;

  const auto u1 = rng_.uniforms(RngDomain::true_events, index, 1);
  const auto u2 = rng_.uniforms(RngDomain::true_events, index, 2);
  ev.emission_delay = c == 3 ? 0.0 : -std::log(u1[0]) / rate_ns_[c];
  const double jitter = sigma_ * std::sqrt(-2.0 * std::log(u2[0])) * std::cos(2.0 * std::numbers::pi * u2[1]);
  ev.measured_delay = t0_ + ev.emission_delay + jitter;
  return ev;
}

EventRecord EventSampler::sample_accidental(std::uint64_t index) const {
  const auto u = rng_.uniforms(RngDomain::accidentals, index, 0);
  EventRecord ev;
  ev.true_channel = TrueChannel::accidental;
  ev.emission_delay = u[0] * cfg_.geometry().span();
  ev.measured_delay = ev.emission_delay;
  ev.stop_energy_deposit = cfg_.stop_window.low + u[1] * cfg_.stop_window.width();
  ev.accepted = true;
  return ev;
}

void EventSampler::accumulate_events(std::uint64_t begin, std::uint64_t end,
                                     std::span<std::uint64_t> counts) const {
  if (counts.size() != cfg_.n_channels) throw DomainError("count buffer does not match the channel count");
  const double inv_width = 1.0 / cfg_.channel_width;
  const auto n_ch = static_cast<double>(cfg_.n_channels);
  PhiloxBatch batch;
  std::array<std::uint64_t, kBatch> idx{}, acc_idx{};
  std::array<int, kBatch> acc_channel{};
  for (std::uint64_t b = begin; b < end; b += kBatch) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(kBatch, end - b));
    for (std::size_t i = 0; i < n; ++i) idx[i] = b + i;
    batch.run(rng_, RngDomain::true_events, idx.data(), n, 0);
    std::size_t n_acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = batch.first(i);
      const int c = (u >= cumulative_[0]) + (u >= cumulative_[1]) + (u >= cumulative_[2]);
      const double e = dep_low_[c] + batch.second(i) * dep_width_[c];
      acc_idx[n_acc] = idx[i];
      acc_channel[n_acc] = c;
      n_acc += start_ok_ && e >= cfg_.stop_window.low && e <= cfg_.stop_window.high;
    }
    if (n_acc == 0) continue;
    std::array<double, kBatch> delay;
    batch.run(rng_, RngDomain::true_events, acc_idx.data(), n_acc, 1);
    for (std::size_t i = 0; i < n_acc; ++i) {
      const int c = acc_channel[i];
      delay[i] = c == 3 ? 0.0 : -std::log(batch.first(i)) / rate_ns_[c];
    }
    batch.run(rng_, RngDomain::true_events, acc_idx.data(), n_acc, 2);
    for (std::size_t i = 0; i < n_acc; ++i) {
      const double jitter = sigma_ * std::sqrt(-2.0 * std::log(batch.first(i))) *
                            std::cos(2.0 * std::numbers::pi * batch.second(i));
      const double x = (t0_ + delay[i] + jitter) * inv_width;
      if (x >= 0.0 && x < n_ch) ++counts[static_cast<std::size_t>(x)];
    }
  }
}

void EventSampler::accumulate_accidentals(std::uint64_t begin, std::uint64_t end,
                                          std::span<std::uint64_t> counts) const {
  if (counts.size() != cfg_.n_channels) throw DomainError("count buffer does not match the channel count");
  const double inv_width = 1.0 / cfg_.channel_width;
  const auto n_ch = static_cast<double>(cfg_.n_channels);
  const double span = cfg_.geometry().span();
  PhiloxBatch batch;
  std::array<std::uint64_t, kBatch> idx{};
  for (std::uint64_t b = begin; b < end; b += kBatch) {
    const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(kBatch, end - b));
    for (std::size_t i = 0; i < n; ++i) idx[i] = b + i;
    batch.run(rng_, RngDomain::accidentals, idx.data(), n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = batch.first(i) * span * inv_width;
      if (x >= 0.0 && x < n_ch) ++counts[static_cast<std::size_t>(x)];
    }
  }
}

EventRecord sample_event(const SpectrometerConfig& cfg, const SpectrumModel& model, RngSeed seed,
                         std::uint64_t index) {
  return EventSampler(cfg, model, seed).sample_event(index, true);
}

Histogram simulate_spectrum(const SpectrometerConfig& cfg, const AnomalyScenario& scenario,
                            const SpectrumModel& base, RngSeed seed, unsigned threads) {
  cfg.validate();
  const SpectrumModel model = apply_scenario(base, scenario);
  const double span = cfg.geometry().span();
  if (!(model.irf.t0 >= 0.0 && model.irf.t0 < span))
    throw DomainError("time zero " + format_double(model.irf.t0) + " ns lies outside the channel range [0, " +
                      format_double(span) + ")");
  const EventSampler sampler(cfg, model, seed);
  const CounterRng rng(seed);
  const std::uint64_t n_true = poisson_count(rng, 0, cfg.source_activity * cfg.live_time);
  const std::uint64_t n_acc = poisson_count(rng, 1, cfg.accidental_rate * cfg.live_time);

  const std::uint64_t true_chunks = (n_true + kChunk - 1) / kChunk;
  const std::uint64_t acc_chunks = (n_acc + kChunk - 1) / kChunk;
  const unsigned workers = resolve_threads(threads);
  std::vector<std::vector<std::uint64_t>> partial(workers, std::vector<std::uint64_t>(cfg.n_channels, 0));

  parallel_for(true_chunks + acc_chunks, workers, [&](unsigned w, std::size_t task) {
    if (task < true_chunks) {
      const std::uint64_t begin = task * kChunk;
      sampler.accumulate_events(begin, std::min(n_true, begin + kChunk), partial[w]);
    } else {
      const std::uint64_t begin = (task - true_chunks) * kChunk;
      sampler.accumulate_accidentals(begin, std::min(n_acc, begin + kChunk), partial[w]);
    }
  });

  Histogram h;
  h.channel_width = cfg.channel_width;
  h.live_time = cfg.live_time;
  h.counts.assign(cfg.n_channels, 0);
  for (const auto& p : partial)
    for (std::size_t k = 0; k < cfg.n_channels; ++k) h.counts[k] += p[k];
  h.metadata = describe(cfg, scenario, base, seed);
  return h;
}

std::vector<Histogram> simulate_replicas(const SpectrometerConfig& cfg, const AnomalyScenario& scenario,
                                         const SpectrumModel& base, std::uint64_t seed,
                                         std::size_t n_replicas, unsigned threads) {
  std::vector<Histogram> out;
  out.reserve(n_replicas);
  for (std::size_t r = 0; r < n_replicas; ++r) out.push_back(simulate_spectrum(cfg, scenario, base, {seed, r}, threads));
  return out;
}

Histogram merge_histograms(std::span<const Histogram> hs) {
  if (hs.empty()) throw DomainError("merge of an empty histogram list");
  Histogram out = hs.front();
  for (std::size_t i = 1; i < hs.size(); ++i) {
    const Histogram& h = hs[i];
    if (h.channel_width != out.channel_width || h.counts.size() != out.counts.size())
      throw DomainError("histogram geometry mismatch in merge");
    for (std::size_t k = 0; k < h.counts.size(); ++k) out.counts[k] += h.counts[k];
    out.live_time += h.live_time;
    for (auto it = out.metadata.begin(); it != out.metadata.end();) {
      const auto other = h.metadata.find(it->first);
      if (other == h.metadata.end() || other->second != it->second)
        it = out.metadata.erase(it);
      else
        ++it;
    }
  }
  return out;
}

std::array<double, 3> window_acceptance(const SpectrometerConfig& cfg) {
  return {range_acceptance(cfg.deposit_2gamma, cfg.stop_window), range_acceptance(cfg.deposit_3gamma, cfg.stop_window),
          range_acceptance(cfg.deposit_prompt, cfg.stop_window)};
}

SpectrumModel observed_model(const SpectrometerConfig& cfg, const AnomalyScenario& scenario,
                             const SpectrumModel& base) {
  cfg.validate();
  SpectrumModel m = apply_scenario(base, scenario);
  const auto a = window_acceptance(cfg);
  const double start_ok = cfg.start_energy > cfg.stop_window.high ? 1.0 : 0.0;
  double w[4] = {m.components[0].intensity * a[0], m.components[1].intensity * a[0],
                 m.components[2].intensity * a[1], m.prompt_fraction * a[2]};
  const double accepted = (w[0] + w[1] + w[2] + w[3]) * start_ok;
  if (accepted > 0.0) {
    for (int c = 0; c < 3; ++c) m.components[c].intensity = w[c] / accepted;
    m.prompt_fraction = w[3] / accepted;
  }
  m.irf.fwhm = cfg.timing_fwhm;
  m.total_events = cfg.source_activity * cfg.live_time * accepted;
  m.background_per_channel = cfg.accidental_rate * cfg.live_time / static_cast<double>(cfg.n_channels);
  return m;
}

}  // namespace pals
