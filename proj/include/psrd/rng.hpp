#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace psrd {

/// Seedable random stream used by every stochastic operation in the library.
///
/// The engine is std::mt19937_64 (a fixed, standardized algorithm), but all
/// value mappings are implemented here instead of using std::*_distribution,
/// which the standard leaves implementation-defined. This makes streams
/// bit-reproducible across compilers and standard libraries:
///   - uniform():  top 53 bits of the next engine output, scaled by 2^-53
///   - normal():   Box-Muller from two uniform draws (no internal cache)
///   - uniform_int(lo,hi): floor(uniform() * span), clamped to hi
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform draw in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const double span = static_cast<double>(hi) - static_cast<double>(lo) + 1.0;
        int v = lo + static_cast<int>(uniform() * span);
        return v > hi ? hi : v;
    }

    /// Standard normal draw. Consumes exactly two engine outputs per call.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derives an independent stream from this stream's seed and a salt.
    /// Forking does not consume or depend on the parent's current state.
    Rng fork(std::uint64_t salt) const { return Rng(mix(seed_, salt)); }

    /// Fisher-Yates shuffle driven by this stream.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
            const int j = uniform_int(0, i);
            std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)]);
        }
    }

private:
    // splitmix64 finalizer over (seed ^ odd-constant * salt)
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
        std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace psrd
