#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace trustcons {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based seed derivation: folds each counter into the running hash with
/// SplitMix64, so derive_seed(m, {a, b, c}) names an independent stream per
/// (a, b, c) cell and can be recomputed without touching any other cell.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> counters) noexcept {
    std::uint64_t h = splitmix64(master);
    for (std::uint64_t c : counters) {
        h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
    }
    return h;
}

/// Stream tags for the sub-streams of a single protocol run.
enum class Stream : std::uint64_t {
    initial_state = 1,
    trust = 2,
    adversary = 3,
};

/// Seeded 64-bit Mersenne Twister with platform-independent real-valued draws.
///
/// The standard distributions are implementation-defined, so uniform and
/// Gaussian variates are produced here from raw 64-bit words: uniform draws use
/// the top 53 bits, Gaussian draws use Box-Muller on two uniforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double gaussian(double mean, double stddev) {
        if (stddev == 0.0) {
            return mean;
        }
        // 1 - u keeps the log argument in (0, 1].
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace trustcons
