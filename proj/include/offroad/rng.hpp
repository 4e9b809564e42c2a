#pragma once

#include <cmath>
#include <cstdint>

namespace offroad {

/// Counter-based random stream.
///
/// Draw `k` of a stream is a pure function of (seed, k), so two streams with
/// the same seed that consume the same draw sequence produce identical values
/// on every platform. Distributions are computed here rather than through
/// <random> because the standard distributions are implementation-defined.
class RngStream {
public:
    constexpr RngStream() = default;
    constexpr explicit RngStream(std::uint64_t seed) : seed_(seed) {}

    /// Stream for an independent sub-task, e.g. one training sample.
    static constexpr RngStream derive(std::uint64_t seed, std::uint64_t key) {
        return RngStream(mix(seed ^ mix(key + 0x632be59bd9b4e019ULL)));
    }

    constexpr std::uint64_t seed() const { return seed_; }
    constexpr std::uint64_t counter() const { return counter_; }

    constexpr std::uint64_t next_u64() {
        return mix(seed_ + 0x9e3779b97f4a7c15ULL * ++counter_);
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    constexpr double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    constexpr bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n). n must be positive.
    constexpr std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift; the bias is < n / 2^64, irrelevant at our sizes.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller (two draws per sample).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace offroad
