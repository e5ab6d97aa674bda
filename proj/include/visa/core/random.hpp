#pragma once

#include "visa/core/matrix.hpp"

#include <cstdint>
#include <random>

namespace visa {

/// splitmix64 mixing step; used to derive independent seeds from structured keys.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hashCombine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

/// Deterministic RNG wrapper. Every stream is identified by an explicit seed;
/// distributions are drawn through fixed code paths so traces are reproducible
/// on a given platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

    /// Derives a child stream from structured keys (clip id, chunk index, ...).
    static Rng keyed(std::uint64_t seed, std::uint64_t k0, std::uint64_t k1 = 0, std::uint64_t k2 = 0) {
        std::uint64_t s = mix64(seed);
        s = hashCombine(s, k0);
        s = hashCombine(s, k1);
        s = hashCombine(s, k2);
        return Rng(s);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // One-shot draw (no cached second variate) so interleaved calls stay reproducible.
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    std::int64_t integer(std::int64_t lo, std::int64_t hi) {  // inclusive range
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    template <typename S>
    MatX<S> gaussian(Index rows, Index cols, double stddev = 1.0) {
        MatX<S> m(rows, cols);
        for (Index c = 0; c < cols; ++c)
            for (Index r = 0; r < rows; ++r) m(r, c) = static_cast<S>(normal(0.0, stddev));
        return m;
    }

    template <typename S>
    MatX<S> uniformMat(Index rows, Index cols, double lo, double hi) {
        MatX<S> m(rows, cols);
        for (Index c = 0; c < cols; ++c)
            for (Index r = 0; r < rows; ++r) m(r, c) = static_cast<S>(uniform(lo, hi));
        return m;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace visa
