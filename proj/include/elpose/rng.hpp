#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace elpose {

// Derives an independent seed for a named consumer of randomness, so that
// adding draws in one subsystem never shifts the stream seen by another.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view purpose) {
  return Rng(stream_seed(seed, purpose));
}

// Box-Muller standard normal. std::normal_distribution is implementation
// defined, which would make datasets differ between standard libraries.
double standard_normal(Rng& rng);

// Uniform on [lo, hi) from the top 53 bits.
double uniform(Rng& rng, double lo, double hi);

}  // namespace elpose
