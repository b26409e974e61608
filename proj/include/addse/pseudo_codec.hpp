// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "addse/codec.hpp"

namespace addse {

/// Fixed linear analysis/synthesis transform standing in for a neural audio
/// codec: non-overlapping frames projected onto the first `latent_dim`
/// orthonormal DCT-II basis vectors.
class PseudoCodec {
public:
    struct Config {
        std::size_t frame_size = 320;
        std::size_t latent_dim = 64;
        std::size_t sample_rate = 16000;
    };

    PseudoCodec() : PseudoCodec(Config{}) {}
    explicit PseudoCodec(const Config& cfg);

    const Config& config() const noexcept { return cfg_; }
    double frame_rate() const noexcept {
        return static_cast<double>(cfg_.sample_rate) / static_cast<double>(cfg_.frame_size);
    }

    // frame_size x latent_dim, row-major; column k is the k-th basis vector.
    std::span<const double> basis() const noexcept { return basis_; }
    double basis_at(std::size_t n, std::size_t k) const { return basis_[n * cfg_.latent_dim + k]; }

    // Tail frame is zero-padded; L = ceil(len / frame_size).
    LatentSeq analyze(std::span<const double> waveform) const;

    // Returns L * frame_size samples; callers truncate to the original length.
    std::vector<double> synthesize(const LatentSeq& latents) const;

private:
    Config cfg_;
    std::vector<double> basis_;
};

}  // namespace addse
