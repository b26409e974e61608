// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "addse/codec.hpp"
#include "addse/params.hpp"

namespace addse {

struct RQDiTConfig {
    std::size_t hidden_dim = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t mlp_ratio = 4;
    std::size_t codebook_size = 0;  // K
    std::size_t depth = 0;          // D
    std::size_t latent_dim = 0;     // H
    double rope_base = 10000.0;

    std::size_t head_dim() const { return hidden_dim / n_heads; }
    void validate() const;  // throws config
};

/// Looks up e(c^{ij}; j) for every position; masked positions map to the
/// zero vector. Output is L x D x H, row-major.
std::vector<double> embed_codes(const CodeGrid& grid, const CodebookSet& books);

/// Rotates consecutive coordinate pairs (2d, 2d+1) of one head vector by
/// position * base^(-2d / head_dim). Throws config on odd length.
void rope_apply(std::span<double> head, double position, double base = 10000.0);

/// Test-only switches.
struct RQDiTHooks {
    bool disable_rope = false;
    // When set (L x hidden_dim), replaces the frame-DiT output.
    std::optional<std::vector<double>> frozen_frame_output;
};

/// Toy RQDiT denoiser.
///
///   clean path  e(c_lambda) -> MLP -> X        (L D x hidden)
///   noisy path  e(c_noisy)  -> MLP -> Y
///   frame-DiT over frames:  input sum_j X[i, j], conditioning sum_j Y[i, j]
///   Z[i, j] = X[i, j] + frame_out[i]
///   depth-DiT over the D depths of each frame, conditioning Y[i, j]
///   head: LayerNorm -> Linear -> SiLU -> Linear -> K logits
///
/// DiT blocks are pre-norm with adaLN-zero modulation (shift, scale, gate for
/// attention and MLP, produced from SiLU(cond) by a zero-initialised linear
/// map), bidirectional multi-head attention with RoPE on queries and keys,
/// and a GELU MLP. Codebook entries are frozen. No time input.
class RQDiT final : public TrainableModel {
public:
    enum class Stack { frame, depth };

    RQDiT(const RQDiTConfig& cfg, CodebookSet books, std::uint64_t seed);
    ~RQDiT() override;
    RQDiT(RQDiT&&) noexcept;
    RQDiT& operator=(RQDiT&&) noexcept;

    const RQDiTConfig& config() const noexcept { return cfg_; }
    const CodebookSet& books() const noexcept { return books_; }

    std::size_t codebook_size() const override { return cfg_.codebook_size; }
    std::string name() const override { return "rqdit"; }

    ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const override;
    ConditionalProbs forward_logits(const MaskedGrid& masked, const CodeGrid& noisy) override;
    // Throws usage if no forward_logits() preceded it.
    void backward(const ConditionalProbs& dlogits) override;
    // One pass over the whole batch; examples never attend to each other.
    ConditionalProbs forward_logits_batch(std::span<const MaskedGrid> masked, std::span<const CodeGrid> noisy) override;
    void backward_batch(const ConditionalProbs& dlogits) override { backward(dlogits); }

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }

    void set_hooks(RQDiTHooks hooks) { hooks_ = std::move(hooks); }
    const RQDiTHooks& hooks() const noexcept { return hooks_; }

    // Logits from explicit embeddings (L x D x H each); lets tests feed the
    // clean path directly.
    ConditionalProbs logits_from_embeddings(std::span<const double> clean_embed, std::span<const double> noisy_embed,
                                            std::size_t frames) const;

    // Frame-DiT output (L x hidden) for the given inputs, hooks applied.
    std::vector<double> frame_output(const MaskedGrid& masked, const CodeGrid& noisy) const;

    // Runs one stack (or a single block of it) on N = tokens x hidden inputs
    // with per-token conditioning; attention is restricted to consecutive
    // groups of `group` tokens with positions 0..group-1.
    std::vector<double> apply_stack(Stack stack, std::span<const double> x, std::span<const double> cond,
                                    std::size_t tokens, std::size_t group,
                                    std::optional<std::size_t> only_layer = std::nullopt) const;

    // Zeroes every weight except the head's output bias (test helper).
    void zero_all_but_output_bias();

    struct Impl;

private:
    RQDiTConfig cfg_;
    CodebookSet books_;
    ParamStore params_;
    RQDiTHooks hooks_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace addse
