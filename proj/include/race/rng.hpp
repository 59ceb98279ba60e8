#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace race {

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64_bytes(s.data(), s.size(), h);
}

// Deterministic random source. All randomness in the pipeline flows from one
// root seed through named substreams, so reruns are bitwise reproducible on
// every platform (mt19937_64 is pinned by the standard; the distributions
// below are hand-rolled because the std ones are not).
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

    // Derive an independent stream, e.g. rng.substream("init:enc0.wq").
    Rng substream(const std::string& name) const {
        uint64_t basis = 0xcbf29ce484222325ULL ^ (seed_ * 0x9e3779b97f4a7c15ULL);
        return Rng(fnv1a64(name, basis) * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    }

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n); rejection sampling keeps it unbiased.
    uint64_t below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Box-Muller; consumes two uniforms per pair, caches the second.
    double normal(double mean = 0.0, double sd = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sd * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + sd * r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace race
