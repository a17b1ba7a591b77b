#pragma once
// Counter-based random numbers (Philox4x32-10, Salmon et al., SC'11).
//
// Every random draw is a pure function of (seed, stream_id, domain, index,
// sub-block), so a replica's event sequence does not depend on how events
// are split across threads.

#include <array>
#include <cstdint>
#include <limits>

#include "pals/errors.hpp"

namespace pals {

struct RngSeed {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

namespace philox {
using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

Counter block(Counter ctr, Key key);
}  // namespace philox

/// Independent sub-sequences within one (seed, stream).
enum class RngDomain : std::uint32_t { true_events = 0, accidentals = 1, counts = 2, analysis = 3 };

/// Double uniform on (0, 1) from the 53 high bits of (hi, lo).
inline double to_open01(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

class CounterRng {
 public:
  explicit CounterRng(RngSeed s);

  /// Four raw 32-bit words for (domain, index, sub). index < 2^40, sub < 256.
  philox::Counter raw(RngDomain domain, std::uint64_t index, std::uint32_t sub) const;

  /// Two doubles uniform on the open interval (0, 1).
  std::array<double, 2> uniforms(RngDomain domain, std::uint64_t index, std::uint32_t sub) const;

  /// Counter block fed to Philox for (domain, index, sub); same range checks as raw().
  philox::Counter counter(RngDomain domain, std::uint64_t index, std::uint32_t sub) const;

  const RngSeed& seed() const { return seed_; }
  const philox::Key& key() const { return key_; }

 private:
  RngSeed seed_;
  philox::Key key_;
};

/// Sequential 32-bit engine over one (domain, index) slot of a CounterRng;
/// satisfies UniformRandomBitGenerator for use with library distributions.
class CounterEngine {
 public:
  using result_type = std::uint32_t;

  CounterEngine(const CounterRng& rng, RngDomain domain, std::uint64_t index)
      : rng_(rng), domain_(domain), index_(index) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

 private:
  CounterRng rng_;
  RngDomain domain_;
  std::uint64_t index_;
  std::uint32_t sub_ = 0;
  philox::Counter buf_{};
  int pos_ = 4;
};

/// SplitMix64 finaliser; derives well-separated child seeds from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace pals
