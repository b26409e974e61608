// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/pseudo_codec.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace addse {

PseudoCodec::PseudoCodec(const Config& cfg) : cfg_(cfg) {
    require(cfg.frame_size >= 1 && cfg.latent_dim >= 1 && cfg.latent_dim <= cfg.frame_size, ErrorKind::config,
            "PseudoCodec: need 1 <= latent_dim (" + std::to_string(cfg.latent_dim) + ") <= frame_size (" +
                std::to_string(cfg.frame_size) + ")");
    require(cfg.sample_rate >= 1, ErrorKind::config, "PseudoCodec: sample_rate must be positive");
    const std::size_t n_size = cfg.frame_size;
    const double scale0 = std::sqrt(1.0 / static_cast<double>(n_size));
    const double scale = std::sqrt(2.0 / static_cast<double>(n_size));
    basis_.resize(n_size * cfg.latent_dim);
    for (std::size_t n = 0; n < n_size; ++n) {
        for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
            const double angle = std::numbers::pi / static_cast<double>(n_size) * (static_cast<double>(n) + 0.5) *
                                 static_cast<double>(k);
            basis_[n * cfg.latent_dim + k] = (k == 0 ? scale0 : scale) * std::cos(angle);
        }
    }
}

LatentSeq PseudoCodec::analyze(std::span<const double> waveform) const {
    require(!waveform.empty(), ErrorKind::invalid_input, "analyze: empty waveform");
    const std::size_t n_size = cfg_.frame_size;
    const std::size_t frames = (waveform.size() + n_size - 1) / n_size;
    LatentSeq out(frames, cfg_.latent_dim);
    for (std::size_t i = 0; i < frames; ++i) {
        auto coeffs = out.frame(i);
        for (std::size_t n = 0; n < n_size; ++n) {
            const std::size_t at = i * n_size + n;
            if (at >= waveform.size()) {
                break;  // zero-padded tail
            }
            const double x = waveform[at];
            for (std::size_t k = 0; k < cfg_.latent_dim; ++k) {
                coeffs[k] += basis_[n * cfg_.latent_dim + k] * x;
            }
        }
    }
    return out;
}

std::vector<double> PseudoCodec::synthesize(const LatentSeq& latents) const {
    require(latents.dim == cfg_.latent_dim, ErrorKind::config,
            "synthesize: latent dimension " + std::to_string(latents.dim) + " does not match codec latent_dim " +
                std::to_string(cfg_.latent_dim));
    const std::size_t n_size = cfg_.frame_size;
    std::vector<double> out(latents.frames * n_size, 0.0);
    for (std::size_t i = 0; i < latents.frames; ++i) {
        auto coeffs = latents.frame(i);
        for (std::size_t n = 0; n < n_size; ++n) {
            double acc = 0.0;
            for (std::size_t k = 0; k < cfg_.latent_dim; ++k) {
                acc += basis_[n * cfg_.latent_dim + k] * coeffs[k];
            }
            out[i * n_size + n] = acc;
        }
    }
    return out;
}

}  // namespace addse
