#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace mp {

/**
 * Counter-style PRNG used for every random draw in the project.
 *
 * SplitMix64 core: 64-bit state, one multiply-xor-shift finalizer per draw.
 * Integer-only state transitions make the stream bit-reproducible across
 * platforms and compilers. Substreams are derived with seed_stream() below
 * so modules never share or race on a generator.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1), 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform on {0, ..., n-1}; n must be nonzero.
  std::uint32_t index(std::uint32_t n) {
    return static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint8_t bit() { return static_cast<std::uint8_t>(next_u64() >> 63); }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/**
 * Derives the seed of an independent substream from a master seed, a textual
 * tag and up to two integer coordinates (FNV-1a over the inputs, then one
 * SplitMix64 finalizer round).
 */
inline std::uint64_t seed_stream(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 0x100000001b3ull;
  };
  for (int i = 0; i < 8; ++i) mix((seed >> (8 * i)) & 0xff);
  for (unsigned char c : tag) mix(c);
  for (int i = 0; i < 8; ++i) mix((a >> (8 * i)) & 0xff);
  for (int i = 0; i < 8; ++i) mix((b >> (8 * i)) & 0xff);
  std::uint64_t z = h + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace mp
