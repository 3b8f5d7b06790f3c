#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace locprod {

// splitmix64 mixer; used to derive independent engine seeds from
// (root seed, stream index) so parallel substreams never overlap by
// construction of distinct well-mixed starting states.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_stream_seed(std::uint64_t root, std::uint64_t stream) {
    return mix64(mix64(root) ^ mix64(stream + 0x1234567890abcdefull));
}

// Deterministic RNG stream. All draws go through explicit transforms of
// the mt19937_64 bit stream, so sequences are identical across standard
// library implementations (std::*_distribution would not guarantee that).
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    static RngStream substream(std::uint64_t root, std::uint64_t stream) {
        return RngStream(derive_stream_seed(root, stream));
    }

    // uniform on [0, 1) with 53-bit resolution
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // integer in {0, ..., n-1}
    std::uint64_t uniform_index(std::uint64_t n) {
        std::uint64_t v = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
        return v < n ? v : n - 1;
    }

    // standard normal via Box-Muller; consumes exactly two uniforms per call
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();  // log(0) guard, probability 2^-53
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double sd) {
        return mean + sd * normal();
    }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

// Two-point law with mean 0 and variance 1: returns (1+sqrt(5))/2 with
// probability (sqrt(5)-1)/(2 sqrt(5)), else (1-sqrt(5))/2.
inline double mammen_weight(RngStream& rng) {
    static const double kSqrt5 = std::sqrt(5.0);
    static const double kPHi = (kSqrt5 - 1.0) / (2.0 * kSqrt5);
    return rng.uniform() < kPHi ? (1.0 + kSqrt5) / 2.0 : (1.0 - kSqrt5) / 2.0;
}

}
