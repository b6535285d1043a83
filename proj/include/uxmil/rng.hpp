#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace uxmil {

// Deterministic, platform-independent RNG. splitmix64 core; streams are
// derived by hashing a parent key with labels, so per-fold / per-episode
// streams never depend on scheduling order.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        // Lemire's multiply-shift with rejection; unbiased and deterministic.
        uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        uint64_t l = static_cast<uint64_t>(m);
        if (l < n) {
            uint64_t t = -n % n;
            while (l < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                l = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    // Standard normal via Box-Muller (explicit so results are portable).
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Child stream derivation: order-independent of other derivations.
    Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        uint64_t h = state_;
        h = mix(h ^ mix(a ^ 0xa0761d6478bd642fULL));
        h = mix(h ^ mix(b ^ 0xe7037ed1a0b428dbULL));
        h = mix(h ^ mix(c ^ 0x8ebc6af09c88c6e3ULL));
        Rng r(0);
        r.state_ = h;
        return r;
    }

    Rng derive(std::string_view label, uint64_t a = 0, uint64_t b = 0) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (char ch : label) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
        return derive(h, a, b);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace uxmil
