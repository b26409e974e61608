// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "addse/codec.hpp"
#include "addse/model.hpp"
#include "addse/optim.hpp"
#include "addse/params.hpp"
#include "addse/rng.hpp"

namespace addse {

struct DCEConfig {
    double lambda_min = 1e-3;
    std::size_t batch_size = 16;
    std::size_t segment_frames = 200;  // 4 s at 50 Hz
    std::size_t steps = 1000;
    double lr = 1e-4;
    double clip_norm = 1.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DCEValue {
    double normalized = 0.0;    // divided by L * D
    double unnormalized = 0.0;  // (1 / lambda) * sum of -log q over masked positions
    std::size_t masked = 0;
    // Masked positions whose true code has probability 0 (loss is +inf).
    std::vector<std::size_t> infinite_positions;
};

/// (1 / lam) * sum over masked positions of -log probs[p][clean[p]].
DCEValue dce_loss(const ConditionalProbs& probs, const CodeGrid& clean, const MaskedGrid& masked, double lam);

/// Same loss from logits. Fills `dlogits` with the exact gradient of the
/// normalized loss: (softmax - onehot) / (lam * L * D) at masked positions,
/// zero elsewhere. Returns the loss.
DCEValue dce_loss_from_logits(const ConditionalProbs& logits, const CodeGrid& clean, const MaskedGrid& masked,
                              double lam, ConditionalProbs* dlogits);

struct PairedCodeDataset {
    std::vector<CodeGrid> clean;
    std::vector<CodeGrid> noisy;
    std::vector<double> snr_db;  // latent-domain SNR per pair
    std::size_t frames = 0;
    std::size_t depth = 0;
    std::size_t codebook_size = 0;
    std::uint64_t seed = 0;
    double rho = 0.0;
    double snr_min_db = 0.0;
    double snr_max_db = 0.0;

    std::size_t size() const noexcept { return clean.size(); }
    void validate() const;
};

struct PairGenConfig {
    std::size_t frames = 200;
    double rho = 0.9;
    double snr_min_db = -5.0;
    double snr_max_db = 15.0;
    // Fixes every pair's SNR (tests, SNR sweeps).
    std::optional<double> snr_override_db;
};

/// Clean latents: stationary AR(1) Gaussian, x_i = rho x_{i-1} + sqrt(1 - rho^2) e_i,
/// unit variance per dimension. Noise: i.i.d. Gaussian scaled so that
/// 10 log10(P_clean / P_noise) equals the pair's SNR, with P the empirical
/// mean square over the segment. Both latents go through the same codebooks.
/// Pair p draws from its own stream derive_seed(seed, p).
PairedCodeDataset generate_paired_dataset(const PairGenConfig& gen, const CodebookSet& books, std::size_t n_pairs,
                                          std::uint64_t seed);

/// Clean AR(1) latent sequences only (codebook training data).
std::vector<LatentSeq> generate_clean_latents(std::size_t n_sequences, std::size_t frames, std::size_t dim,
                                              double rho, std::uint64_t seed);

/// Manifest (JSON) + payload of little-endian uint16 codes ordered
/// pair -> [clean grid, noisy grid] -> frame -> depth. The payload sits next
/// to the manifest with extension ".codes".
void save_dataset(const std::filesystem::path& manifest, const PairedCodeDataset& dataset);
PairedCodeDataset load_dataset(const std::filesystem::path& manifest);

struct StepMetrics {
    std::size_t step = 0;
    double loss = 0.0;  // batch mean of normalized DCE
    double lr = 0.0;
    double grad_norm = 0.0;
    // Per-decile mean loss of this batch's examples; NaN where empty.
    std::array<double, 10> decile_loss{};
};

struct TrainMetrics {
    double mean_loss = 0.0;
    std::size_t steps = 0;
    std::array<double, 10> decile_loss{};
    std::array<std::size_t, 10> decile_count{};
    double lambda_min = 0.0;
};

using StepCallback = std::function<void(const StepMetrics&)>;

/// One pass over the dataset in shuffled batches of cfg.batch_size (the last
/// batch may be short). Per example: lambda ~ U[lambda_min, 1],
/// forward_corrupt, forward, DCE, backward; per batch: mean gradient, clip,
/// AdamW step. Stops early once `max_steps` optimizer steps have run.
/// Throws training (with batch index and lambdas) on a NaN loss.
TrainMetrics train_epoch(TrainableModel& model, const PairedCodeDataset& dataset, const DCEConfig& cfg, AdamW& opt,
                         Rng& rng, const StepCallback& on_step = {}, std::size_t max_steps = SIZE_MAX);

/// Runs epochs until cfg.steps optimizer steps have been taken.
TrainMetrics train(TrainableModel& model, const PairedCodeDataset& dataset, const DCEConfig& cfg, AdamW& opt,
                   Rng& rng, const StepCallback& on_step = {});

/// Stratified Monte Carlo DCE: for each example, n_lambda values at the
/// midpoints of equal bins of [lambda_min, 1], one corruption each. Returns
/// the mean normalized DCE.
double eval_dce(const ConditionalModel& model, const PairedCodeDataset& dataset, const DCEConfig& cfg,
                std::size_t n_lambda, std::uint64_t seed);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepMetrics& m);

}  // namespace addse
