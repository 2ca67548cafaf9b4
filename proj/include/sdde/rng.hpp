#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sdde {

// Philox4x32-10 counter-based generator (Salmon et al., SC 2011).
// A draw is a pure function of (key, counter), so any replicate or step can be
// generated independently of every other one.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeylA;
      key[1] += kWeylB;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMulA = 0xD2511F53u;
  static constexpr std::uint32_t kMulB = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeylA = 0x9E3779B9u;
  static constexpr std::uint32_t kWeylB = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMulA) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMulB) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// SplitMix64 finalizer; used to derive independent sub-seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Stream of standard normals keyed by (seed, stream id). Draw i is a pure
/// function of (seed, stream, i); Box-Muller on one Philox block gives two normals.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  /// The i-th standard normal of the stream.
  double at(std::uint64_t i) const {
    const auto pair = normal_pair(i / 2);
    return (i % 2 == 0) ? pair[0] : pair[1];
  }

  std::array<double, 2> normal_pair(std::uint64_t block_index) const {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_index),
                                  static_cast<std::uint32_t>(block_index >> 32),
                                  static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32)};
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed_),
                              static_cast<std::uint32_t>(seed_ >> 32)};
    const auto out = Philox4x32::block(ctr, key);
    const std::uint64_t a = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    const std::uint64_t b = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    // u1 in (0,1], u2 in [0,1)
    const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace sdde
