#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace longct {

/// Splitmix64 mixer. Used both as a stream generator and as a stateless
/// counter hash, so every random draw in the project is reproducible
/// independent of threading and of the standard library's distribution
/// implementations.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combine a seed with stream identifiers (stage, study, voxel, ...).
inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// Small deterministic RNG stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed)) {}

    uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Fisher-Yates shuffle with this stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

/// Stateless uniform draw in [0,1) keyed by a counter tuple. Safe to call
/// from any thread for any index without coordination.
inline float counter_uniform(uint64_t seed, uint64_t stream, uint64_t index) {
    uint64_t h = splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)));
    return static_cast<float>(h >> 40) * 0x1.0p-24f;
}

/// Single-round variant for high-volume masks (dropout); spreads the index
/// multiplicatively before one mix round.
inline float counter_uniform_fast(uint64_t key, uint64_t stream, uint64_t index) {
    uint64_t h = splitmix64(key ^ (stream * 0x9e3779b97f4a7c15ULL) ^
                            (index * 0xd1b54a32d192ed03ULL));
    return static_cast<float>(h >> 40) * 0x1.0p-24f;
}

inline double counter_normal(uint64_t seed, uint64_t stream, uint64_t index) {
    uint64_t h1 = splitmix64(seed ^ splitmix64(stream ^ splitmix64(2 * index)));
    uint64_t h2 = splitmix64(seed ^ splitmix64(stream ^ splitmix64(2 * index + 1)));
    double u1 = static_cast<double>(h1 >> 11) * 0x1.0p-53;
    double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace longct
