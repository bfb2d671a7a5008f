#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace adiag {

// All randomness in the project flows through this header. The engine is
// std::mt19937_64 (its output sequence is pinned by the standard) and the
// distribution code below is written out explicitly, so a given seed yields
// the same stream on every platform and standard library.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable sub-seed derivation: hash(master, stream). Used to split one
// user-facing seed into independent streams (one per subject, one for the
// parameter init, one for the split, ...).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t state = master ^ (0xd1342543de82ef95ull * (stream + 1));
    std::uint64_t a = splitmix64_next(state);
    std::uint64_t b = splitmix64_next(state);
    return a ^ (b >> 1);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Inclusive bounds. Modulo bias is below 2^-32 for the ranges used here.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Box-Muller. One engine draw pair per call, no cached spare, so the
    // consumption pattern is fixed and replayable.
    double normal(double mean = 0.0, double sd = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586;
        return mean + sd * r * std::cos(two_pi * u2);
    }

    // Fisher-Yates; std::shuffle is not portable across library versions.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(engine_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace adiag
