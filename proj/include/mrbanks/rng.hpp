#pragma once

// Seeded random helpers. Only std::mt19937_64 (whose output sequence is fixed
// by the standard) is used as the engine. Draws used by the engine and the
// simulator are computed here so those streams are reproducible across
// standard library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace mrbanks::rng {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent sub-stream seed from a parent seed and a tag.
inline constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t fnv1a(std::string_view s,
                                     std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Engine make_engine(std::uint64_t seed) { return Engine(splitmix64(seed)); }

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Engine& eng, double p) { return uniform01(eng) < p; }

// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return x % n;
}

inline double standard_normal(Engine& eng) {
  double u1;
  do {
    u1 = uniform01(eng);
  } while (u1 <= 0.0);
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double lognormal(Engine& eng, double median, double sigma) {
  return median * std::exp(sigma * standard_normal(eng));
}

// Binomial(n, p) for multinomial bootstrap resampling of count tables.
// Delegates to std::binomial_distribution, so bootstrap error bars are
// reproducible per standard library rather than across them.
inline std::int64_t binomial(Engine& eng, std::int64_t n, double p) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  std::binomial_distribution<std::int64_t> dist(n, p);
  return dist(eng);
}

}  // namespace mrbanks::rng
