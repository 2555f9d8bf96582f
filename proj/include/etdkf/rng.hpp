#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace etdkf {

// All stochastic components share one engine type so a scenario seed pins the
// whole run.  Independent purposes (truth noise, measurement noise, replicate
// i of a Monte-Carlo batch, ...) get their own streams via derive_stream so
// adding a consumer never perturbs the draws of another.
using Prng = std::mt19937_64;

inline Prng derive_stream(std::uint64_t seed, std::initializer_list<std::uint32_t> tags) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed & 0xffffffffu),
                                     static_cast<std::uint32_t>(seed >> 32)};
    words.insert(words.end(), tags.begin(), tags.end());
    std::seed_seq seq(words.begin(), words.end());
    return Prng(seq);
}

// Stream tags.  Keep these stable: changing them changes every seeded run.
inline constexpr std::uint32_t kStreamTruth = 1;
inline constexpr std::uint32_t kStreamMeasurement = 2;
inline constexpr std::uint32_t kStreamTrajectory = 3;
inline constexpr std::uint32_t kStreamInit = 4;

// One standard-normal draw.  The distribution is constructed fresh so no
// cached second variate leaks between consumers.
inline double standard_normal(Prng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return n(rng);
}

}  // namespace etdkf
