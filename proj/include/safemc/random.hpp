#pragma once

// Counter-based uniform draws: every value is a pure function of (seed, stream, counter),
// so results do not depend on how agents are scheduled across threads.

#include <cstdint>

namespace safemc::rng {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t bits(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t key = mix64(seed ^ mix64(stream ^ 0xd1b54a32d192ed03ULL));
    return mix64(key ^ mix64(counter + 0x8cb92ba72f3d8dd7ULL));
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return static_cast<double>(bits(seed, stream, counter) >> 11) * 0x1.0p-53;
}

} // namespace safemc::rng
