#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace apt {

/// One splitmix64 step: advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent child seed for stream `index` of `seed`.
///
/// child = splitmix64(seed + golden * (index + 1)). Every per-sample and
/// per-step seed in the library goes through this, which is what makes
/// parallel and serial evaluation produce identical results.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Seeded generator with platform-independent sampling routines.
///
/// std::*_distribution outputs are implementation-defined, so uniform,
/// normal and bounded-integer draws are computed here from raw mt19937_64
/// words.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform double in [0, 1).
    double uniform();
    /// Standard normal via Box-Muller (one variate per call).
    double normal();
    /// Uniform integer in [0, n); n must be positive.
    std::size_t below(std::size_t n);

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace apt
