// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "addse/grid.hpp"

namespace addse {

/// L x D x K array; one row over the K regular codes per (frame, depth).
/// The mask has no entry, so q(M | .) = 0 structurally. Also used for raw
/// logits before the softmax.
struct ConditionalProbs {
    std::size_t frames = 0;
    std::size_t depth = 0;
    std::size_t codebook_size = 0;
    std::vector<double> values;

    ConditionalProbs() = default;
    ConditionalProbs(std::size_t l, std::size_t d, std::size_t k, double fill = 0.0)
        : frames(l), depth(d), codebook_size(k), values(l * d * k, fill) {}

    std::size_t positions() const noexcept { return frames * depth; }

    std::span<double> row(std::size_t flat) { return {values.data() + flat * codebook_size, codebook_size}; }
    std::span<const double> row(std::size_t flat) const {
        return {values.data() + flat * codebook_size, codebook_size};
    }

    bool matches(const CodeGrid& grid) const {
        return frames == grid.frames() && depth == grid.depth() && codebook_size == grid.codebook_size();
    }

    // Throws model_output naming the first row that is negative, non-finite
    // or whose sum is off by more than tol.
    void validate(double tol = 1e-6) const;
};

// In-place max-subtracted softmax of every row.
void softmax_rows(ConditionalProbs& logits);

/// q_theta(c^{i,j} | c_lambda, c_noisy). Implementations carry no time input.
/// Rows at unmasked positions are produced but carry no meaning; samplers
/// and losses never read them.
class ConditionalModel {
public:
    virtual ~ConditionalModel() = default;

    virtual ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const = 0;

    virtual std::size_t codebook_size() const = 0;
    virtual std::string name() const = 0;

protected:
    // Throws config unless masked/noisy share shape and K matches.
    void check_inputs(const MaskedGrid& masked, const CodeGrid& noisy) const;
};

class UniformModel final : public ConditionalModel {
public:
    explicit UniformModel(std::size_t codebook_size) : codebook_size_(codebook_size) {}

    ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const override;
    std::size_t codebook_size() const override { return codebook_size_; }
    std::string name() const override { return "uniform"; }

private:
    std::size_t codebook_size_;
};

/// Returns the same rows regardless of input; handy for sampler tests.
class FixedModel final : public ConditionalModel {
public:
    explicit FixedModel(ConditionalProbs rows) : rows_(std::move(rows)) { rows_.validate(); }

    ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const override;
    std::size_t codebook_size() const override { return rows_.codebook_size; }
    std::string name() const override { return "fixed"; }

private:
    ConditionalProbs rows_;
};

}  // namespace addse
