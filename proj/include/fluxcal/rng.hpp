#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fluxcal {

// splitmix64 finalizer; used to derive independent child seeds from a user
// seed plus an index without correlations between neighbouring indices.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 1));
}

// Deterministic RNG. std::mt19937_64 output is pinned by the standard, but
// the std distributions are not, so the draw algorithms live here.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Multiply-shift with rejection of the biased
    // tail keeps the draw exact and platform-independent.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        unsigned __int128 m = (unsigned __int128)gen_() * n;
        uint64_t lo = (uint64_t)m;
        if (lo < n) {
            uint64_t t = (0 - n) % n;
            while (lo < t) {
                m = (unsigned __int128)gen_() * n;
                lo = (uint64_t)m;
            }
        }
        return (uint64_t)(m >> 64);
    }

    // Standard normal via Box-Muller; caches the second value.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform in the closed ball of given radius, by rejection from the cube.
    void in_ball(double radius, double out[3]) {
        for (;;) {
            double x = uniform(-1.0, 1.0);
            double y = uniform(-1.0, 1.0);
            double z = uniform(-1.0, 1.0);
            if (x * x + y * y + z * z <= 1.0) {
                out[0] = x * radius;
                out[1] = y * radius;
                out[2] = z * radius;
                return;
            }
        }
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = (size_t)below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace fluxcal
