#include "pals/rng.hpp"

#include "pals/errors.hpp"

namespace pals {

namespace philox {

namespace {
constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void round(Counter& c, const Key& k) {
  const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
  const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
  c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}
}  // namespace

Counter block(Counter ctr, Key key) {
  for (int r = 0; r < 10; ++r) {
    round(ctr, key);
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

}  // namespace philox

CounterRng::CounterRng(RngSeed s)
    : seed_(s),
      key_{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32)} {}

philox::Counter CounterRng::counter(RngDomain domain, std::uint64_t index, std::uint32_t sub) const {
  if (index >> 40) throw DomainError("random index exceeds 2^40");
  if (sub > 0xFFu) throw DomainError("random sub-block exceeds 255");
  const auto dom = static_cast<std::uint32_t>(domain) & 0xFu;
  return philox::Counter{static_cast<std::uint32_t>(index),
                            static_cast<std::uint32_t>(index >> 32) | (dom << 16) | (sub << 24),
                            static_cast<std::uint32_t>(seed_.stream_id),
                            static_cast<std::uint32_t>(seed_.stream_id >> 32)};
}

philox::Counter CounterRng::raw(RngDomain domain, std::uint64_t index, std::uint32_t sub) const {
  return philox::block(counter(domain, index, sub), key_);
}

std::array<double, 2> CounterRng::uniforms(RngDomain domain, std::uint64_t index,
                                           std::uint32_t sub) const {
  const auto w = raw(domain, index, sub);
  return {to_open01(w[0], w[1]), to_open01(w[2], w[3])};
}

CounterEngine::result_type CounterEngine::operator()() {
  if (pos_ == 4) {
    buf_ = rng_.raw(domain_, index_, sub_++);
    pos_ = 0;
  }
  return buf_[pos_++];
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace pals
