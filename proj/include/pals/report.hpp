#pragma once
// "pals-report v1" text format:
//
//   # pals-report v1
//   # <free comment lines>
//   key = value
//   ...
//   begin_table <name>
//   # <column> <column> ...
//   <value> <value> ...
//   end_table
//
// Keys are unique and keep their insertion order. LF line endings.

#include "pals/fit.hpp"
#include "pals/hypothesis.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pals {

inline constexpr const char* kReportMagic = "# pals-report v1";

struct ReportTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

class Report {
 public:
  void comment(const std::string& text);
  /// Replaces an existing value in place.
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::size_t value);
  void set(const std::string& key, bool value);
  ReportTable& table(const std::string& name, std::vector<std::string> columns);

  std::optional<std::string> get(const std::string& key) const;
  /// Throws FormatError when the key is missing or not a number.
  double number(const std::string& key) const;
  const ReportTable* find_table(const std::string& name) const;

  const std::vector<std::string>& comments() const { return comments_; }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  const std::vector<ReportTable>& tables() const { return tables_; }

 private:
  std::vector<std::string> comments_;
  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<ReportTable> tables_;
};

void write_report(const Report& r, std::ostream& out);
/// Throws IoError when the file cannot be written.
void write_report(const Report& r, const std::filesystem::path& path);
/// Throws FormatError on a missing magic line, malformed or duplicate entries
/// and unterminated tables.
Report read_report(std::istream& in);
Report read_report(const std::filesystem::path& path);

/// Estimates, errors, deviance and diagnostics under "<prefix>".
void add_fit(Report& r, const FitResult& f, const std::string& prefix = "fit.");
/// Per-channel observed, expected and Pearson residual over the fitted range.
void add_residuals(Report& r, const Histogram& h, const FitResult& f, const FitSpec& spec,
                   const std::string& name = "residuals");
void add_test(Report& r, const TestResult& t, const std::string& prefix = "test.");
/// Power table (N, replicas, rejections, power, CI) and the first N reaching
/// `target_power`.
void add_power(Report& r, const PowerCurve& c, double target_power);

}  // namespace pals
