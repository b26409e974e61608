// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "addse/diffusion.hpp"
#include "addse/model.hpp"
#include "addse/rng.hpp"

namespace addse {

enum class DecodeMode { categorical, argmax };

struct SamplerConfig {
    std::size_t n_steps = 16;
    DecodeMode decode_mode = DecodeMode::categorical;
    std::uint64_t seed = 0;
    // Reuse the previous prediction when the last step unmasked nothing.
    // Turning it off changes only SampleTrace::Step::evaluated and nfe.
    bool reuse_predictions = true;
    double horizon = 1.0;
};

struct SampleTrace {
    struct Step {
        std::size_t step = 0;
        double t = 0.0;
        double s = 0.0;
        std::size_t unmask_count = 0;
        bool evaluated = false;
    };
    std::vector<Step> steps;
    std::size_t nfe = 0;
    std::size_t final_mask_count = 0;
    std::size_t frames = 0;
    std::size_t depth = 0;

    // JSON lines: one {step, t, s, unmask_count, evaluated} per step followed
    // by a summary {nfe, n_steps, L, D}.
    void write_jsonl(std::ostream& out) const;
};

/// Uniform grid: t_n = T (1 - n / N), s_n = t_{n+1}, last s = 0.
std::vector<std::pair<double, double>> step_grid(std::size_t n_steps, double horizon = 1.0);

/// One reverse transition from t to s. Unmasked positions are copied. A
/// masked position draws u ~ U[0,1) and unmasks iff u < (t - s) / t, in which
/// case a second uniform picks the code from its row (or the row argmax).
/// Positions are visited row-major and only masked ones consume randomness.
/// Returns the number of positions unmasked.
std::size_t reverse_step(MaskedGrid& grid, const ConditionalProbs& probs, double t, double s, Rng& rng,
                         DecodeMode mode = DecodeMode::categorical);

/// Generates a clean grid from the fully absorbed state conditioned on
/// `noisy`. The model is evaluated at the first step and after every step
/// that unmasked at least one position; otherwise the cached prediction is
/// reused.
std::pair<CodeGrid, SampleTrace> sample(const ConditionalModel& model, const CodeGrid& noisy,
                                        const SamplerConfig& cfg);

/// Exact law of sample() at n_steps = 1: the product over positions of the
/// all-masked prediction, indexed by grid_index(grid, K). Throws capacity
/// beyond 2^24 grids.
std::vector<double> expected_distribution_one_step(const ConditionalModel& model, const CodeGrid& noisy);

double total_variation(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace addse
