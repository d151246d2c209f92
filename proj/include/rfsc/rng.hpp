#pragma once

// Deterministic randomness. std::mt19937_64 is fully specified by the
// standard; the distributions here are hand-rolled (uniform via 53-bit
// mantissa, normal via Box-Muller, unbiased bounded ints via rejection)
// because std::*_distribution output is implementation-defined and would
// break bit-reproducibility of checkpoints and reports across toolchains.
//
// Independent streams are derived with mix_seed(base, a, b): every consumer
// (init, shuffling, attack random starts, episode sampling, synthetic data)
// owns its own stream, so enabling or disabling one feature never shifts the
// draws seen by another.

#include <cstdint>
#include <random>
#include <vector>

#include "rfsc/error.hpp"

namespace rfsc {

// splitmix64 finalizer: good avalanche, cheap, stable across platforms.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(base ^ mix64(a ^ mix64(b)));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; two uniform draws per call, no cached
    // second value, so the stream position is a pure function of call count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53; // uniform() can return exactly 0
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) fail_data("Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k elements of a random permutation of [0, n): partial Fisher-Yates.
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k < 0 || k > n) fail_data("Rng::sample_without_replacement: k out of range");
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        }
        pool.resize(static_cast<std::size_t>(k));
        return pool;
    }

private:
    std::mt19937_64 gen_;
};

} // namespace rfsc
