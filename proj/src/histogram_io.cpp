#include "pals/histogram_io.hpp"

#include "pals/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

namespace pals {

namespace {

constexpr const char* kReservedKeys[] = {"channel_width_ns", "n_channels", "live_time_s", "seed"};

bool is_reserved(const std::string& key) {
  for (const char* k : kReservedKeys)
    if (key == k) return true;
  return false;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view s, const std::string& what) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError("malformed " + what + ": '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_histogram(const Histogram& h, std::ostream& out) {
  h.geometry().validate();
  std::string s;
  s.reserve(16 * h.counts.size() + 256);
  s += kHistogramMagic;
  s += '\n';
  s += "# channel_width_ns=" + format_double(h.channel_width) + '\n';
  s += "# n_channels=" + std::to_string(h.counts.size()) + '\n';
  s += "# live_time_s=" + format_double(h.live_time) + '\n';
  const auto seed = h.metadata.find("seed");
  s += "# seed=" + (seed != h.metadata.end() ? seed->second : std::string("unspecified")) + '\n';
  for (const auto& [k, v] : h.metadata) {
    if (is_reserved(k)) continue;
    s += "# " + k + '=' + v + '\n';
  }
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    s += std::to_string(i);
    s += ' ';
    s += std::to_string(h.counts[i]);
    s += '\n';
  }
  out << s;
}

void write_histogram(const Histogram& h, const std::filesystem::path& path) {
  std::ostringstream buf;
  write_histogram(h, buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << buf.str();
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Histogram read_histogram(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHistogramMagic)
    throw FormatError("missing '# pals-histogram v1' header line");

  std::map<std::string, std::string> header;
  Histogram h;
  std::size_t expected = 0;
  bool in_header = true;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (in_header && !line.empty() && line[0] == '#') {
      const std::string_view body = trim(std::string_view(line).substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;  // plain comment
      const std::string key(trim(body.substr(0, eq)));
      const std::string value(trim(body.substr(eq + 1)));
      if (key.empty()) throw FormatError("empty header key");
      if (!header.emplace(key, value).second) throw FormatError("duplicate header key '" + key + "'");
      continue;
    }
    if (in_header) {
      for (const char* k : kReservedKeys)
        if (!header.count(k)) throw FormatError(std::string("missing header key '") + k + "'");
      h.channel_width = parse_number<double>(header["channel_width_ns"], "channel_width_ns");
      expected = parse_number<std::size_t>(header["n_channels"], "n_channels");
      h.live_time = parse_number<double>(header["live_time_s"], "live_time_s");
      if (expected == 0) throw FormatError("n_channels must be >= 1");
      if (!(h.channel_width > 0.0)) throw FormatError("channel_width_ns must be > 0");
      for (const auto& [k, v] : header)
        if (k != "channel_width_ns" && k != "n_channels" && k != "live_time_s") h.metadata[k] = v;
      h.counts.reserve(expected);
      in_header = false;
    }
    const std::string_view sv(line);
    const auto sp = sv.find(' ');
    if (sp == std::string_view::npos) throw FormatError("malformed channel line " + std::to_string(index));
    const auto idx = parse_number<std::size_t>(sv.substr(0, sp), "channel index");
    if (idx != index) throw FormatError("channel index out of order at line " + std::to_string(index));
    if (index >= expected) throw FormatError("more channel lines than n_channels");
    h.counts.push_back(parse_number<std::uint64_t>(sv.substr(sp + 1), "channel count"));
    ++index;
  }
  if (in_header) {
    for (const char* k : kReservedKeys)
      if (!header.count(k)) throw FormatError(std::string("missing header key '") + k + "'");
    throw FormatError("histogram has no channel lines");
  }
  if (h.counts.size() != expected)
    throw FormatError("truncated histogram: " + std::to_string(h.counts.size()) + " of " +
                      std::to_string(expected) + " channels");
  return h;
}

Histogram read_histogram(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_histogram(in);
}

}  // namespace pals
