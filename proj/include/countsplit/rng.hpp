#ifndef COUNTSPLIT_RNG_HPP
#define COUNTSPLIT_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

/**
 * @file rng.hpp
 * @brief Seeded random streams and the binomial sampler used for thinning.
 *
 * Every stochastic routine takes a 64-bit seed and builds its own `Engine`.
 * Independent units of work (replicates, restarts, resamples) get sub-seeds from `derive_seed()`,
 * so results never depend on scheduling or thread count.
 */

namespace countsplit {

using Engine = std::mt19937_64;

/**
 * SplitMix64 finalizer. Bijective on 64-bit integers, so distinct inputs never collide.
 */
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/**
 * Derive a sub-seed from `base` along a path of stream identifiers, e.g. `derive_seed(seed, {replicate, stage})`.
 */
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t state = mix64(base);
    for (auto p : path) {
        state = mix64(state ^ mix64(p + 0x632be59bd9b4e019ULL));
    }
    return state;
}

inline Engine make_engine(std::uint64_t seed) {
    return Engine(mix64(seed));
}

/**
 * Uniform draw on the open interval (0, 1) with 53 bits of resolution.
 */
inline double uniform_open01(Engine& engine) {
    return (static_cast<double>(engine() >> 11) + 0.5) * 0x1.0p-53;
}

/**
 * Uniform integer in [0, bound) by rejection, unbiased for any bound > 0.
 */
std::uint64_t uniform_index(Engine& engine, std::uint64_t bound);

/**
 * Draw from Binomial(trials, prob).
 * Uses sequential inversion when `trials * min(prob, 1 - prob) < 30`, otherwise Hormann's BTRD transformed rejection.
 * `prob` outside (0, 1) is handled exactly: 0 returns 0 and 1 returns `trials`.
 */
std::uint64_t sample_binomial(Engine& engine, std::uint64_t trials, double prob);

}

#endif
