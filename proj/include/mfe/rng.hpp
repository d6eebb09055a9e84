#pragma once

#include <cstdint>
#include <cmath>

namespace mfe {

// Deterministic, platform-independent generator (splitmix64 core).
// std:: distributions are implementation-defined, so everything that must
// reproduce byte-identically across runs draws through this type.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, n), unbiased (rejection)
    uint64_t next_below(uint64_t n) {
        if (n <= 1) return 0;
        uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int next_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_double(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    float next_float() { return static_cast<float>(next_double()); }

    bool next_bool() { return (next_u64() & 1ULL) != 0; }

    // Box-Muller; one value per call, cache discarded for simplicity
    double next_normal() {
        double u1 = next_double(), u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(T* data, size_t n) {
        for (size_t i = n; i > 1; --i) {
            size_t j = next_below(i);
            T tmp = data[i - 1];
            data[i - 1] = data[j];
            data[j] = tmp;
        }
    }

private:
    uint64_t state_;
};

// Stable stream derivation: child streams for (seed, stream-id) pairs, so
// per-slide / per-epoch work is order-independent.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    Rng r(seed ^ (0x2545F4914F6CDD1DULL * (stream + 1)));
    return r.next_u64();
}

// FNV-1a, used for seeded tie-breaking on string ids
inline uint64_t hash_str(uint64_t seed, const char* s) {
    uint64_t h = 1469598103934665603ULL ^ seed;
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace mfe
