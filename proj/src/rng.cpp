#include "localdom/rng.hpp"

#include <cmath>

namespace localdom {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char ch : key) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(seed) ^ h);
}

double uniform(Rng& rng, double lo, double hi) {
  // 53-bit mantissa draw; avoids implementation-defined distribution code.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  const auto idx = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n)));
  return idx < n ? idx : n - 1;
}

double standard_normal(Rng& rng) {
  // Box-Muller, one sample per call.
  double u1 = uniform(rng, 0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace localdom
