#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace octflow {

// splitmix64; used to derive independent stream seeds from (seed, tag...) tuples.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

inline std::uint64_t seed_combine(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return seed_combine(seed_combine(a, b), c);
}

// Counter-based generator (xoshiro-style output of splitmix64 stream).
// std::uniform_real_distribution is implementation-defined, so all stochastic
// draws in the project go through this to stay bit-identical across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1), 53-bit resolution
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // integer in [0, n) without modulo bias (n > 0)
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // standard normal via Box-Muller on the portable uniform
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.28318530717958647692 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Exponential(1); fully developed speckle intensity statistic
    double next_exponential() {
        double u;
        do {
            u = next_double();
        } while (u <= 0.0);
        return -std::log(u);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over bytes; config hashing and provenance ids.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace octflow
