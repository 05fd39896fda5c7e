#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace semsearch {

// splitmix64; used to derive independent per-worker streams from one seed.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded generator wrapper. mt19937_64 has a standard-mandated sequence, and
// the bounded/unit mappings below are implemented here rather than with
// std::uniform_*_distribution (whose output is implementation-defined), so a
// seed pins every draw exactly.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // Uniform integer in [0, n). Multiply-shift with rejection, no modulo bias.
    uint64_t below(uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>(gen_()) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            const uint64_t t = -n % n;
            while (lo < t) {
                m = static_cast<__uint128_t>(gen_()) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Child seed keyed by (base, key); independent of any draw order, so workers
// that partition the key space get identical streams no matter the partition.
inline uint64_t derive_seed(uint64_t base, uint64_t key) {
    uint64_t s = base ^ (key * 0xd1342543de82ef95ULL);
    return splitmix64(s);
}

}  // namespace semsearch
