#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace ktf {

// splitmix64 finalizer; used both as a generator step and as a seed mixer
// when deriving independent sub-streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG with explicit sub-stream derivation. Sequences are
// reproducible across runs on the same build; nothing here depends on
// libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x5851f42d4c957f2dULL)) {}

    // Independent stream for (seed, path...), e.g. per (epoch, user).
    static Rng derive(uint64_t seed, std::initializer_list<uint64_t> path) {
        uint64_t s = seed;
        for (uint64_t p : path) s = splitmix64(s ^ (p + 0x9e3779b97f4a7c15ULL));
        return Rng(s);
    }

    uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    double normal(double mean = 0.0, double sd = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + sd * spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double z0 = r * std::cos(2.0 * M_PI * u2);
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mean + sd * z0;
    }

    // normal(0, sd) resampled until |z| <= 2 sd
    double truncated_normal(double sd) {
        for (;;) {
            double z = normal(0.0, 1.0);
            if (std::abs(z) <= 2.0) return sd * z;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ktf
