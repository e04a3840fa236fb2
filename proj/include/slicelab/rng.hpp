#pragma once

#include <cmath>
#include <cstdint>

namespace slicelab {

// xoshiro256++ with splitmix64 seeding. Standard-library distributions are
// not bit-stable across implementations, and identical (config, seed) pairs
// must produce identical experiment output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            x += 0x9e3779b97f4a7c15ull;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            word = z ^ (z >> 31);
        }
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Unbiased integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t threshold = -bound % bound;
        for (;;) {
            std::uint64_t r = next();
            if (r >= threshold)
                return r % bound;
        }
    }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double gaussian(double mean, double sigma) {
        if (sigma == 0.0)
            return mean;
        if (have_spare_) {
            have_spare_ = false;
            return mean + sigma * spare_;
        }
        // Box-Muller; u1 kept strictly positive.
        double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return mean + sigma * r * std::cos(a);
    }

    // Independent child stream, stable for a given (parent seed, id).
    Rng fork(std::uint64_t id) { return Rng(next() ^ (id * 0x9e3779b97f4a7c15ull)); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace slicelab
