// Deterministic seeding: one master seed, derived streams for every
// stochastic operation. Each consumer takes an explicit generator.
#pragma once

#include <cstdint>
#include <random>

namespace mesen {

using Rng = std::mt19937_64;

// splitmix64 finalizer; stable stream derivation independent of call order.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for stream `stream` of repetition `rep` under `master`.
inline uint64_t derive_seed(uint64_t master, uint64_t rep, uint64_t stream = 0) {
    return mix_seed(mix_seed(master ^ mix_seed(rep)) ^ mix_seed(stream + 0x51ed2701ULL));
}

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

}  // namespace mesen
