#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "matrix.hpp"

namespace dualenc {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Deterministic random source. The raw engine is mt19937_64 (its output
// sequence is pinned by the standard); the real-valued draws are derived
// here rather than through std::*_distribution, whose algorithms are
// implementation-defined and would break cross-toolchain reproducibility.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed), base_seed_(seed) {}

    // Named substream: same seed + same name always yields the same stream,
    // and distinct consumers cannot perturb each other's draw order.
    Rng stream(std::string_view name) const { return Rng(seed_mix(base_seed_, name)); }

    static std::uint64_t seed_mix(std::uint64_t seed, std::string_view name) {
        std::uint64_t h = fnv1a64(name);
        // splitmix64 finalizer over the combination; avoids correlated engines.
        std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Caches the second deviate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n) by rejection; unbiased.
    std::uint64_t below(std::uint64_t n) {
        require(n > 0, "Rng::below: n must be positive");
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Fisher-Yates, back to front.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    Matrix<T> normal_matrix(std::size_t rows, std::size_t cols, double mean, double stddev) {
        Matrix<T> m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<T>(normal(mean, stddev));
        return m;
    }

    template <class T>
    Matrix<T> uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi) {
        Matrix<T> m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<T>(uniform(lo, hi));
        return m;
    }

  private:
    std::mt19937_64 engine_;
    std::uint64_t base_seed_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace dualenc
