#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace chiplet {

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Counter-based stream: the draws for (seed, particle, step) do not depend
// on how many other particles exist or which thread evaluates them.
class StreamRng {
public:
    StreamRng(std::uint64_t seed, std::uint64_t particle, std::uint64_t step)
        : state_(mix64(mix64(mix64(seed) ^ particle) ^ (step * 0xd1342543de82ef95ULL))) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on (0, 1].
    double uniform_open0() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }
    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Box-Muller pair of independent standard normals.
    std::pair<double, double> normal_pair() {
        const double r = std::sqrt(-2.0 * std::log(uniform_open0()));
        const double a = 2.0 * std::numbers::pi * uniform();
        return {r * std::cos(a), r * std::sin(a)};
    }

private:
    std::uint64_t state_;
};

// Step index reserved for initial sampling streams.
inline constexpr std::uint64_t kInitStream = ~0ULL;

}  // namespace chiplet
