// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace addse {

/// Project-wide random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard, so a seed reproduces the same stream on every conforming
/// toolchain. The std:: distributions are implementation-defined, so all
/// variates are derived here from raw engine output:
///   uniform()  = (next() >> 11) * 2^-53, in [0, 1)
///   normal()   = Box-Muller on two uniforms, the cosine branch only
///   below(n)   = floor(uniform() * n)
/// Independent sub-streams (per dataset pair, per sweep cell) are seeded with
/// derive_seed(), a splitmix64 finalizer over (seed, stream).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal();

    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

    // Inverse-CDF draw from an unnormalized non-negative weight vector; one
    // uniform consumed. Falls back to the last positive entry on round-off.
    std::size_t categorical(std::span<const double> weights);

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x9e3779b97f4a7c15ULL));
}

}  // namespace addse
