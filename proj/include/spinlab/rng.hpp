#pragma once

#include <cstdint>
#include <random>
#include <string_view>

// Seed discipline: every randomized routine takes either an engine or a 64-bit
// seed, and derives child streams by hashing (master, label, index).  Replicas
// therefore produce identical output regardless of scheduling or thread count.
// Bit-level reproducibility is promised within a build of one toolchain, not
// across standard libraries.

namespace spinlab {

using Rng = std::mt19937_64;

namespace rng_detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace rng_detail

/// Deterministic child seed for the stream labelled (label, index).
inline std::uint64_t child_seed(std::uint64_t master, std::string_view label,
                                std::uint64_t index = 0) {
    std::uint64_t s = master ^ rng_detail::fnv1a(label);
    std::uint64_t a = rng_detail::splitmix64(s);
    s ^= index * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = rng_detail::splitmix64(s);
    return a ^ (b + 0x165667b19e3779f9ULL + (a << 6) + (a >> 2));
}

inline Rng make_stream(std::uint64_t master, std::string_view label,
                       std::uint64_t index = 0) {
    return Rng(child_seed(master, label, index));
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(rng);
}

inline double uniform_unit(Rng& rng) {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(rng);
}

}  // namespace spinlab
