#include "pals/config.hpp"

#include "pals/errors.hpp"
#include "pals/histogram_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace pals {

namespace {

using Setter = std::function<void(Config&, const std::string&)>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& v, const char* what) {
  throw ConfigError("'" + v + "' is not " + what);
}

double to_double(const std::string& v) {
  double x = 0.0;
  const char* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end || !std::isfinite(x)) bad_value(v, "a finite number");
  return x;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t x = 0;
  const char* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, x);
  if (ec != std::errc() || p != end) bad_value(v, "a non-negative integer");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(v, "true or false");
}

EnergyRange to_range(const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 2) bad_value(v, "a 'low, high' pair");
  return {to_double(parts[0]), to_double(parts[1])};
}

Objective to_objective(const std::string& v) {
  for (auto o : {Objective::poisson, Objective::least_squares})
    if (v == to_string(o)) return o;
  bad_value(v, "poisson or least_squares");
}

RateUnit to_rate_unit(const std::string& v) {
  for (auto u : {RateUnit::per_us, RateUnit::per_ns})
    if (v == to_string(u)) return u;
  bad_value(v, "per_us or per_ns");
}

std::string range_text(const EnergyRange& r) { return format_double(r.low) + ", " + format_double(r.high); }

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

// Components indexed by a key suffix; grows the component list on demand.
DecayComponent& component(Config& c, const std::string& key, std::size_t prefix) {
  const std::string idx = key.substr(prefix);
  const std::uint64_t i = to_u64(idx);
  if (i >= 64) throw ConfigError("component index " + idx + " is out of range");
  if (i >= c.model.components.size()) c.model.components.resize(i + 1, DecayComponent{1.0, 0.0});
  return c.model.components[i];
}

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"run", {{"seed", [](Config& c, const std::string& v) { c.seed = to_u64(v); }}}},
      {"spectrometer",
       {{"start_energy", [](Config& c, const std::string& v) { c.spectrometer.start_energy = to_double(v); }},
        {"stop_window", [](Config& c, const std::string& v) { c.spectrometer.stop_window = to_range(v); }},
        {"timing_fwhm", [](Config& c, const std::string& v) { c.spectrometer.timing_fwhm = to_double(v); }},
        {"slow_resolving_time",
         [](Config& c, const std::string& v) { c.spectrometer.slow_resolving_time = to_double(v); }},
        {"accidental_rate", [](Config& c, const std::string& v) { c.spectrometer.accidental_rate = to_double(v); }},
        {"channel_width", [](Config& c, const std::string& v) { c.spectrometer.channel_width = to_double(v); }},
        {"n_channels", [](Config& c, const std::string& v) { c.spectrometer.n_channels = to_u64(v); }},
        {"live_time", [](Config& c, const std::string& v) { c.spectrometer.live_time = to_double(v); }},
        {"source_activity", [](Config& c, const std::string& v) { c.spectrometer.source_activity = to_double(v); }},
        {"deposit_2gamma", [](Config& c, const std::string& v) { c.spectrometer.deposit_2gamma = to_range(v); }},
        {"deposit_3gamma", [](Config& c, const std::string& v) { c.spectrometer.deposit_3gamma = to_range(v); }},
        {"deposit_prompt", [](Config& c, const std::string& v) { c.spectrometer.deposit_prompt = to_range(v); }}}},
      {"model",
       {{"components",
         [](Config& c, const std::string& v) {
           const auto n = to_u64(v);
           if (n == 0 || n > 64) throw ConfigError("components must lie in [1, 64]");
           c.model.components.resize(n, DecayComponent{1.0, 0.0});
         }},
        {"prompt_fraction", [](Config& c, const std::string& v) { c.model.prompt_fraction = to_double(v); }},
        {"t0", [](Config& c, const std::string& v) { c.model.irf.t0 = to_double(v); }},
        {"fwhm", [](Config& c, const std::string& v) { c.model.irf.fwhm = to_double(v); }},
        {"background", [](Config& c, const std::string& v) { c.model.background_per_channel = to_double(v); }},
        {"total_events", [](Config& c, const std::string& v) { c.model.total_events = to_double(v); }}}},
      {"scenario",
       {{"mode", [](Config& c, const std::string& v) { c.scenario.mode = parse_experiment_mode(v); }},
        {"field_orientation",
         [](Config& c, const std::string& v) { c.scenario.field_orientation = parse_field_orientation(v); }},
        {"doubling_transfer", [](Config& c, const std::string& v) { c.scenario.doubling_transfer = to_double(v); }},
        {"lambda_shift", [](Config& c, const std::string& v) { c.scenario.lambda_shift = to_double(v); }},
        {"comparative_factor", [](Config& c, const std::string& v) { c.scenario.comparative_factor = to_double(v); }},
        {"comparative_factor_error",
         [](Config& c, const std::string& v) { c.scenario.comparative_factor_error = to_double(v); }}}},
      {"fit",
       {{"free", [](Config& c, const std::string& v) { c.fit.free = split_list(v); }},
        {"fixed", [](Config& c, const std::string& v) { c.fit.fixed = split_list(v); }},
        {"first_channel", [](Config& c, const std::string& v) { c.fit.first_channel = to_u64(v); }},
        {"last_channel", [](Config& c, const std::string& v) { c.fit.last_channel = to_u64(v); }},
        {"max_iterations", [](Config& c, const std::string& v) { c.fit.max_iterations = to_u64(v); }},
        {"convergence_tol", [](Config& c, const std::string& v) { c.fit.convergence_tol = to_double(v); }},
        {"gradient_tol", [](Config& c, const std::string& v) { c.fit.gradient_tol = to_double(v); }},
        {"objective", [](Config& c, const std::string& v) { c.fit.objective = to_objective(v); }},
        {"rate_unit", [](Config& c, const std::string& v) { c.fit.rate_unit = to_rate_unit(v); }},
        {"covariance", [](Config& c, const std::string& v) { c.fit.covariance = to_bool(v); }},
        {"init_from_data", [](Config& c, const std::string& v) { c.fit.init_from_data = to_bool(v); }}}},
      {"experiment",
       {{"test", [](Config& c, const std::string& v) { c.experiment.test = parse_power_test(v); }},
        {"n_events", [](Config& c, const std::string& v) { c.experiment.n_events = to_double(v); }},
        {"lambda_null", [](Config& c, const std::string& v) { c.experiment.lambda_null = to_double(v); }},
        {"significance", [](Config& c, const std::string& v) { c.experiment.significance = to_double(v); }}}},
      {"power",
       {{"test", [](Config& c, const std::string& v) { c.power.test = parse_power_test(v); }},
        {"grid",
         [](Config& c, const std::string& v) {
           c.power.grid.clear();
           for (const auto& x : split_list(v)) c.power.grid.push_back(to_double(x));
         }},
        {"replicas", [](Config& c, const std::string& v) { c.power.replicas = to_u64(v); }},
        {"alpha", [](Config& c, const std::string& v) { c.power.alpha = to_double(v); }},
        {"target_power", [](Config& c, const std::string& v) { c.power.target_power = to_double(v); }}}},
      {"constants",
       {{"alpha", [](Config& c, const std::string& v) { c.constants.alpha = to_double(v); }},
        {"m_p", [](Config& c, const std::string& v) { c.constants.m_p = to_double(v); }},
        {"m_e", [](Config& c, const std::string& v) { c.constants.m_e = to_double(v); }},
        {"hbar", [](Config& c, const std::string& v) { c.constants.hbar = to_double(v); }},
        {"c", [](Config& c, const std::string& v) { c.constants.c = to_double(v); }},
        {"G", [](Config& c, const std::string& v) { c.constants.G = to_double(v); }}}},
  };
  return table;
}

void apply_entry(Config& c, const std::string& section, const std::string& key, const std::string& value) {
  const auto& table = setters().at(section);
  const auto it = table.find(key);
  if (it != table.end()) {
    it->second(c, value);
    return;
  }
  if (section == "model" && key.rfind("rate_", 0) == 0) {
    component(c, key, 5).rate = to_double(value);
    return;
  }
  if (section == "model" && key.rfind("intensity_", 0) == 0) {
    component(c, key, 10).intensity = to_double(value);
    return;
  }
  if (section == "fit" && key.rfind("bound.", 0) == 0) {
    const auto parts = split_list(value);
    if (parts.size() != 2) bad_value(value, "a 'low, high' pair");
    c.fit.bounds[key.substr(6)] = {to_double(parts[0]), to_double(parts[1])};
    return;
  }
  throw ConfigError("unknown key '" + key + "' in [" + section + "]");
}

void check_components(const Config& c) {
  const std::size_t n = c.model.components.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string idx = std::to_string(i);
    const bool added = i >= default_neon_model().components.size();
    if (added && (!c.has("model", "rate_" + idx) || !c.has("model", "intensity_" + idx)))
      throw ConfigError("[model] needs rate_" + idx + " and intensity_" + idx);
  }
}

void validate(const Config& c) {
  try {
    if (c.has("spectrometer")) c.spectrometer.validate();
    if (c.has("scenario")) c.scenario.validate();
    if (c.has("model")) {
      check_components(c);
      c.model.validate();
    }
    if (c.has("constants")) {
      if (!(c.constants.alpha > 0.0 && c.constants.m_p > 0.0 && c.constants.m_e > 0.0 && c.constants.hbar > 0.0 &&
            c.constants.c > 0.0 && c.constants.G > 0.0))
        throw ConfigError("[constants] values must be > 0");
    }
    if (c.has("experiment")) {
      if (!(c.experiment.n_events > 0.0)) throw ConfigError("[experiment] n_events must be > 0");
      if (!(c.experiment.significance > 0.0 && c.experiment.significance < 1.0))
        throw ConfigError("[experiment] significance must lie in (0, 1)");
      if (c.experiment.lambda_null && !(*c.experiment.lambda_null > 0.0))
        throw ConfigError("[experiment] lambda_null must be > 0");
    }
    if (c.has("power")) {
      if (c.power.replicas == 0) throw ConfigError("[power] replicas must be >= 1");
      if (!(c.power.alpha > 0.0 && c.power.alpha < 1.0)) throw ConfigError("[power] alpha must lie in (0, 1)");
      if (!(c.power.target_power > 0.0 && c.power.target_power <= 1.0))
        throw ConfigError("[power] target_power must lie in (0, 1]");
      for (std::size_t i = 0; i < c.power.grid.size(); ++i)
        if (c.power.grid[i] < 0.0 || (i > 0 && !(c.power.grid[i] > c.power.grid[i - 1])))
          throw ConfigError("[power] grid must be non-negative and increasing");
    }
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty element in list '" + s + "'");
    out.push_back(item);
  }
  return out;
}

void Config::require(const std::string& section) const {
  if (!has(section)) throw ConfigError("missing section [" + section + "]");
}

void Config::require(const std::string& section, const std::string& key) const {
  require(section);
  if (!has(section, key)) throw ConfigError("missing key '" + key + "' in [" + section + "]");
}

Config parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  Config c;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError("entry '" + section + "' lies outside a section");
    if (!setters().count(section)) throw ConfigError("unknown section [" + section + "]");
    c.present.insert(section);
  }
  // Component counts must be known before per-component keys are applied.
  for (const auto& [section, body] : tree)
    if (section == "model" && body.count("components")) {
      apply_entry(c, section, "components", trim(body.get_child("components").data()));
      c.present.insert("model.components");
    }
  for (const auto& [section, body] : tree)
    for (const auto& [key, node] : body) {
      if (!node.empty()) throw ConfigError("nested entry '" + key + "' in [" + section + "]");
      if (section == "model" && key == "components") continue;
      const std::string value = trim(node.data());
      if (value.empty()) throw ConfigError("empty value for '" + key + "' in [" + section + "]");
      try {
        apply_entry(c, section, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("[" + section + "] " + key + ": " + e.what());
      }
      c.present.insert(section + "." + key);
    }
  validate(c);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_config(in);
}

std::map<std::string, std::string> config_snapshot(const Config& c, const std::vector<std::string>& sections) {
  std::map<std::string, std::string> m;
  for (const auto& section : sections) {
    const std::string p = section + ".";
    if (section == "run") {
      m[p + "seed"] = std::to_string(c.seed);
    } else if (section == "spectrometer") {
      const auto& s = c.spectrometer;
      m[p + "start_energy"] = format_double(s.start_energy);
      m[p + "stop_window"] = range_text(s.stop_window);
      m[p + "timing_fwhm"] = format_double(s.timing_fwhm);
      m[p + "slow_resolving_time"] = format_double(s.slow_resolving_time);
      m[p + "accidental_rate"] = format_double(s.accidental_rate);
      m[p + "channel_width"] = format_double(s.channel_width);
      m[p + "n_channels"] = std::to_string(s.n_channels);
      m[p + "live_time"] = format_double(s.live_time);
      m[p + "source_activity"] = format_double(s.source_activity);
      m[p + "deposit_2gamma"] = range_text(s.deposit_2gamma);
      m[p + "deposit_3gamma"] = range_text(s.deposit_3gamma);
      m[p + "deposit_prompt"] = range_text(s.deposit_prompt);
    } else if (section == "model") {
      const auto& md = c.model;
      m[p + "components"] = std::to_string(md.components.size());
      for (std::size_t i = 0; i < md.components.size(); ++i) {
        m[p + "rate_" + std::to_string(i)] = format_double(md.components[i].rate);
        m[p + "intensity_" + std::to_string(i)] = format_double(md.components[i].intensity);
      }
      m[p + "prompt_fraction"] = format_double(md.prompt_fraction);
      m[p + "t0"] = format_double(md.irf.t0);
      m[p + "fwhm"] = format_double(md.irf.fwhm);
      m[p + "background"] = format_double(md.background_per_channel);
      m[p + "total_events"] = format_double(md.total_events);
    } else if (section == "scenario") {
      const auto& s = c.scenario;
      m[p + "mode"] = to_string(s.mode);
      m[p + "field_orientation"] = to_string(s.field_orientation);
      m[p + "doubling_transfer"] = format_double(s.doubling_transfer);
      m[p + "lambda_shift"] = format_double(s.lambda_shift);
      m[p + "comparative_factor"] = format_double(s.comparative_factor);
      m[p + "comparative_factor_error"] = format_double(s.comparative_factor_error);
    } else if (section == "fit") {
      const auto& f = c.fit;
      if (f.free) m[p + "free"] = join(*f.free);
      if (!f.fixed.empty()) m[p + "fixed"] = join(f.fixed);
      for (const auto& [name, b] : f.bounds) m[p + "bound." + name] = format_double(b.lower) + ", " + format_double(b.upper);
      m[p + "first_channel"] = std::to_string(f.first_channel);
      m[p + "last_channel"] = std::to_string(f.last_channel);
      m[p + "max_iterations"] = std::to_string(f.max_iterations);
      m[p + "convergence_tol"] = format_double(f.convergence_tol);
      m[p + "gradient_tol"] = format_double(f.gradient_tol);
      m[p + "objective"] = to_string(f.objective);
      m[p + "rate_unit"] = to_string(f.rate_unit);
      m[p + "covariance"] = f.covariance ? "true" : "false";
      m[p + "init_from_data"] = f.init_from_data ? "true" : "false";
    } else if (section == "experiment") {
      const auto& e = c.experiment;
      m[p + "test"] = to_string(e.test);
      m[p + "n_events"] = format_double(e.n_events);
      if (e.lambda_null) m[p + "lambda_null"] = format_double(*e.lambda_null);
      m[p + "significance"] = format_double(e.significance);
    } else if (section == "power") {
      const auto& w = c.power;
      m[p + "test"] = to_string(w.test);
      std::vector<std::string> g;
      for (double x : w.grid) g.push_back(format_double(x));
      m[p + "grid"] = join(g);
      m[p + "replicas"] = std::to_string(w.replicas);
      m[p + "alpha"] = format_double(w.alpha);
      m[p + "target_power"] = format_double(w.target_power);
    } else if (section == "constants") {
      const auto& k = c.constants;
      m[p + "alpha"] = format_double(k.alpha);
      m[p + "m_p"] = format_double(k.m_p);
      m[p + "m_e"] = format_double(k.m_e);
      m[p + "hbar"] = format_double(k.hbar);
      m[p + "c"] = format_double(k.c);
      m[p + "G"] = format_double(k.G);
    } else {
      throw ConfigError("unknown section [" + section + "]");
    }
  }
  return m;
}

FitSpec build_fit_spec(const Config& c, const Histogram& h) {
  const std::size_t n = c.model.components.size();
  FitSpec spec = c.fit.init_from_data ? make_fit_spec(h, c.model) : make_fit_spec(c.model);
  auto id_of = [&](const std::string& name) {
    try {
      return parse_param_name(name, n);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("[fit] ") + e.what());
    }
  };
  if (c.fit.free) {
    std::fill(spec.free.begin(), spec.free.end(), false);
    for (const auto& name : *c.fit.free) spec.set_free(id_of(name), true);
  }
  for (const auto& name : c.fit.fixed) spec.set_free(id_of(name), false);
  for (const auto& [name, b] : c.fit.bounds) spec.bound(id_of(name)) = b;
  spec.first_channel = c.fit.first_channel;
  spec.last_channel = c.fit.last_channel;
  spec.max_iterations = c.fit.max_iterations;
  spec.convergence_tol = c.fit.convergence_tol;
  spec.gradient_tol = c.fit.gradient_tol;
  spec.objective = c.fit.objective;
  spec.rate_unit = c.fit.rate_unit;
  spec.compute_covariance = c.fit.covariance;
  try {
    spec.validate(h.n_channels());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("[fit] setup: ") + e.what());
  }
  return spec;
}

}  // namespace pals
