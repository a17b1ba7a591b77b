#pragma once
// "pals-histogram v1" text format:
//
//   # pals-histogram v1
//   # channel_width_ns=0.5
//   # n_channels=4096
//   # live_time_s=10
//   # seed=1
//   # <further key=value metadata, sorted by key>
//   0 12
//   1 9
//   ...
//
// LF line endings, one "<index> <count>" line per channel, indices in order.

#include "pals/decay_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace pals {

inline constexpr const char* kHistogramMagic = "# pals-histogram v1";

void write_histogram(const Histogram& h, std::ostream& out);
/// Throws IoError when the file cannot be opened or written.
void write_histogram(const Histogram& h, const std::filesystem::path& path);

/// Throws FormatError on a missing magic line, missing header keys,
/// malformed or truncated channel lines.
Histogram read_histogram(std::istream& in);
Histogram read_histogram(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace pals
