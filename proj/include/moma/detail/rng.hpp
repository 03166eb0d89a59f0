#pragma once

// Deterministic RNG helpers. Seeds are derived with splitmix64 mixing and
// doubles come from an explicit 53-bit mapping, so results are reproducible
// across platforms and across serial/parallel execution.

#include <cstdint>
#include <random>

namespace moma::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Counter-based sub-seed: stream `index` of a run seeded with `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(base ^ splitmix64(index + 0x51ed2701a0b1c2d3ull));
}

inline double next_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double next_uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * next_double(rng);
}

// Bounded draw; the modulo bias is negligible for the index ranges used here.
inline std::size_t next_index(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

} // namespace moma::detail
