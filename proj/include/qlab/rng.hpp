#pragma once

#include <cstdint>

namespace qlab {

// Counter-based uniform generator: the i-th draw of stream `seed` is a pure
// function of (seed, i), so results do not depend on thread count or order.
class CounterRng {
public:
    explicit constexpr CounterRng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

    constexpr uint64_t bits(uint64_t counter) const {
        return mix(key_ + mix(counter + 0x632be59bd9b4e019ULL));
    }

    // Uniform in the open interval (0, 1); never returns 0 or 1.
    constexpr double uniform(uint64_t counter) const {
        return (static_cast<double>(bits(counter) >> 12) + 0.5) * 0x1.0p-52;
    }

    uint64_t key() const { return key_; }

private:
    // splitmix64 finaliser
    static constexpr uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
};

} // namespace qlab
