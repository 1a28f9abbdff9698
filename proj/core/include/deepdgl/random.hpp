#pragma once

#include <cstdint>
#include <random>

namespace deepdgl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Independent stream seeds derived from one user seed, so that each purpose
// (initialization, splitting, negatives, reparameterization, ...) draws from
// its own generator.
enum class Stream : std::uint64_t {
    init = 1,
    split = 2,
    batching = 3,
    negatives = 4,
    reparam = 5,
    dead_codes = 6,
    synthetic_prototypes = 7,
    synthetic_series = 8,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(stream) << 56)) + index);
}

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    return Rng(derive_seed(seed, stream, index));
}

}  // namespace deepdgl
