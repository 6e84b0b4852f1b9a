#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace isomerge {

// Deterministic RNG with explicit stream derivation. Distribution
// sampling is hand-rolled on top of mt19937_64 so sequences do not
// depend on the standard library's unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : root_(seed), engine_(mix(seed)) {}

    // independent child stream; tag values must be distinct per use site
    Rng stream(std::uint64_t tag) const { return Rng(mix(root_ + mix(tag))); }

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; one value per call, pair cached
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n ? engine_() % n : 0; }

private:
    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t root_ = 0;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace isomerge
