#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace localdom {

using Rng = std::mt19937_64;

// Stable 64-bit seed for an independent stream keyed by (seed, key).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);

inline Rng make_rng(std::uint64_t seed, std::string_view key) { return Rng(derive_seed(seed, key)); }

double uniform(Rng& rng, double lo, double hi);

// Uniform integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

double standard_normal(Rng& rng);

}  // namespace localdom
