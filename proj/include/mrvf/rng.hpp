#pragma once

#include <cstdint>
#include <random>

namespace mrvf {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Private stream seed for item `index` under `master`. Independent of scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return mix64(master ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Named sub-streams so unrelated consumers of one master seed never collide.
enum class Stream : std::uint64_t {
    GeometryTargets = 0x67656f6d,
    GeometryVoxels = 0x766f786c,
    TestTargets = 0x74657374,
    TestParams = 0x74707261,
    Noise = 0x6e6f6973,
    KMeans = 0x6b6d6e73,
};

constexpr std::uint64_t derive_seed(std::uint64_t master, Stream s) {
    return mix64(master + mix64(static_cast<std::uint64_t>(s)));
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace mrvf
