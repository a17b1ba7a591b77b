#include "pals/report.hpp"

#include "pals/errors.hpp"
#include "pals/histogram_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pals {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> w;
  for (std::string x; in >> x;) w.push_back(x);
  return w;
}

}  // namespace

void Report::comment(const std::string& text) {
  if (text.find('\n') != std::string::npos) throw DomainError("report comment contains a line break");
  comments_.push_back(text);
}

void Report::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of(" \t=\n#") != std::string::npos)
    throw DomainError("invalid report key '" + key + "'");
  if (value.find('\n') != std::string::npos) throw DomainError("report value for '" + key + "' contains a line break");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void Report::set(const std::string& key, double value) { set(key, format_double(value)); }
void Report::set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }
void Report::set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

ReportTable& Report::table(const std::string& name, std::vector<std::string> columns) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
    throw DomainError("invalid report table name '" + name + "'");
  if (find_table(name)) throw DomainError("duplicate report table '" + name + "'");
  tables_.push_back({name, std::move(columns), {}});
  return tables_.back();
}

std::optional<std::string> Report::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

double Report::number(const std::string& key) const {
  const auto v = get(key);
  if (!v) throw FormatError("report has no key '" + key + "'");
  double x = 0.0;
  const char* end = v->data() + v->size();
  const auto [p, ec] = std::from_chars(v->data(), end, x);
  if (ec != std::errc() || p != end) throw FormatError("report value of '" + key + "' is not a number");
  return x;
}

const ReportTable* Report::find_table(const std::string& name) const {
  for (const auto& t : tables_)
    if (t.name == name) return &t;
  return nullptr;
}

void write_report(const Report& r, std::ostream& out) {
  std::string s = std::string(kReportMagic) + '\n';
  for (const auto& c : r.comments()) s += "# " + c + '\n';
  for (const auto& [k, v] : r.entries()) s += k + " = " + v + '\n';
  for (const auto& t : r.tables()) {
    s += "begin_table " + t.name + '\n';
    s += "#";
    for (const auto& c : t.columns) s += ' ' + c;
    s += '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) s += (i ? " " : "") + row[i];
      s += '\n';
    }
    s += "end_table\n";
  }
  out << s;
}

void write_report(const Report& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_report(r, out);
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

Report read_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportMagic) throw FormatError("missing '# pals-report v1' header line");
  Report r;
  ReportTable* open = nullptr;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    const std::string where = "report line " + std::to_string(n);
    if (open) {
      if (line == "end_table") {
        open = nullptr;
      } else if (!line.empty() && line[0] == '#') {
        open->columns = words(line.substr(1));
      } else {
        auto row = words(line);
        if (!open->columns.empty() && row.size() != open->columns.size())
          throw FormatError(where + ": row width does not match the columns");
        open->rows.push_back(std::move(row));
      }
      continue;
    }
    if (line.empty()) continue;
    if (line[0] == '#') {
      r.comment(trim(line.substr(1)));
      continue;
    }
    if (line.rfind("begin_table ", 0) == 0) {
      const std::string name = trim(line.substr(12));
      if (r.find_table(name)) throw FormatError(where + ": duplicate table '" + name + "'");
      open = &r.table(name, {});
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    const std::string key = line.substr(0, eq);
    if (r.get(key)) throw FormatError(where + ": duplicate key '" + key + "'");
    try {
      r.set(key, line.substr(eq + 3));
    } catch (const DomainError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (open) throw FormatError("unterminated table '" + open->name + "'");
  return r;
}

Report read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_report(in);
}

void add_fit(Report& r, const FitResult& f, const std::string& prefix) {
  const std::size_t n = f.model.components.size();
  r.set(prefix + "objective", to_string(f.objective));
  r.set(prefix + "converged", f.converged);
  r.set(prefix + "singular", f.singular);
  r.set(prefix + "message", f.message.empty() ? std::string("ok") : f.message);
  r.set(prefix + "n_iterations", f.n_iterations);
  r.set(prefix + "deviance", f.deviance);
  r.set(prefix + "n_rows", f.n_rows);
  r.set(prefix + "degrees_of_freedom", f.degrees_of_freedom);
  r.set(prefix + "gradient_norm", f.gradient_norm);
  for (std::size_t q = 0; q < f.params.size(); ++q) {
    const std::string name = param_at(q, n).name();
    r.set(prefix + name, f.params[q]);
    r.set(prefix + name + ".error", f.errors[q]);
    r.set(prefix + name + ".free", static_cast<bool>(f.free[q]));
    if (f.at_bound[q]) r.set(prefix + name + ".at_bound", true);
  }
  for (std::size_t i = 0; i < n; ++i)
    r.set(prefix + "lifetime_ns_" + std::to_string(i), mean_lifetime(f.model.components[i]));
}

void add_residuals(Report& r, const Histogram& h, const FitResult& f, const FitSpec& spec, const std::string& name) {
  const auto [first, last] = spec.channel_range(h.n_channels());
  const auto mu = expected_counts(f.model, h.geometry());
  auto& t = r.table(name, {"channel", "time_ns", "observed", "expected", "pearson"});
  for (std::size_t k = first; k < last; ++k) {
    const double n = static_cast<double>(h.counts[k]);
    const double res = mu[k] > 0.0 ? (n - mu[k]) / std::sqrt(mu[k]) : 0.0;
    t.rows.push_back({std::to_string(k), format_double((static_cast<double>(k) + 0.5) * h.channel_width),
                      std::to_string(h.counts[k]), format_double(mu[k]), format_double(res)});
  }
}

void add_test(Report& r, const TestResult& t, const std::string& prefix) {
  r.set(prefix + "null_hypothesis", t.null_hypothesis);
  r.set(prefix + "statistic", t.statistic);
  r.set(prefix + "dof", t.dof);
  r.set(prefix + "p_value", t.p_value);
  r.set(prefix + "effective_sigma", t.effective_sigma);
  r.set(prefix + "significance", t.significance);
  r.set(prefix + "decision", std::string(t.reject ? "reject" : "fail to reject"));
  r.set(prefix + "valid", t.valid);
  if (!t.message.empty()) r.set(prefix + "message", t.message);
  r.set(prefix + "deviance_null", t.deviance_null);
  r.set(prefix + "deviance_alt", t.deviance_alt);
}

void add_power(Report& r, const PowerCurve& c, double target_power) {
  r.set("power.test", to_string(c.test));
  r.set("power.alpha", c.alpha);
  r.set("power.alpha_sigma", stats::two_sided_sigma(c.alpha));
  r.set("power.target_power", target_power);
  const auto first = c.first_reaching(target_power);
  if (first) {
    const auto& p = c.points[*first];
    r.set("power.min_n_events", p.n_events);
    r.set("power.min_n_power", p.power);
    r.set("power.min_n_ci_low", p.ci.low);
    r.set("power.min_n_ci_high", p.ci.high);
  } else {
    r.set("power.min_n_events", std::string("none"));
  }
  auto& t = r.table("power", {"n_events", "replicas", "rejections", "invalid", "power", "ci_low", "ci_high",
                               "median_sigma"});
  for (const auto& p : c.points)
    t.rows.push_back({format_double(p.n_events), std::to_string(p.replicas), std::to_string(p.rejections),
                      std::to_string(p.invalid), format_double(p.power), format_double(p.ci.low),
                      format_double(p.ci.high), format_double(p.median_sigma)});
}

}  // namespace pals
