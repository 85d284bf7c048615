#pragma once

#include <random>
#include <sstream>
#include <string>

#include "drop/tensor.hpp"

namespace drop {

using Rng = std::mt19937_64;

// Stable stream-splitting: derive an independent seed from (seed, tag).
// splitmix64 finalizer keeps nearby tags uncorrelated.
inline uint64_t split_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double uniform(Rng& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

inline double normal(Rng& g, double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(g);
}

inline int uniform_int(Rng& g, int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(g);
}

inline Tensor randn(std::vector<int> shape, Rng& g, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(g);
    return t;
}

inline Tensor rand_uniform(std::vector<int> shape, Rng& g, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(g);
    return t;
}

// mt19937_64 streams its full state as text; exact round-trip.
inline std::string rng_to_string(const Rng& g) {
    std::ostringstream os;
    os << g;
    return os.str();
}

inline Rng rng_from_string(const std::string& s) {
    Rng g;
    std::istringstream is(s);
    is >> g;
    return g;
}

}  // namespace drop
