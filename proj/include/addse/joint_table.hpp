// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "addse/model.hpp"
#include "addse/rng.hpp"

namespace addse {

/// Explicit joint law over (clean grid, noisy grid) pairs for tiny
/// instances. Grids are enumerated by grid_index() with radix K, and the
/// table is stored clean-major: mass(clean, noisy) = probs[clean * G + noisy]
/// with G = K^{L D}.
class JointTable {
public:
    static constexpr std::uint64_t kCapacity = std::uint64_t{1} << 24;

    JointTable() = default;
    JointTable(std::size_t frames, std::size_t depth, std::size_t codebook_size, std::vector<double> probs);

    std::size_t frames() const noexcept { return frames_; }
    std::size_t depth() const noexcept { return depth_; }
    std::size_t codebook_size() const noexcept { return codebook_size_; }
    std::size_t positions() const noexcept { return frames_ * depth_; }
    std::uint64_t grid_count() const noexcept { return grid_count_; }

    double mass(std::uint64_t clean, std::uint64_t noisy) const { return probs_[clean * grid_count_ + noisy]; }
    const std::vector<double>& probs() const noexcept { return probs_; }

    CodeGrid grid(std::uint64_t index) const;

    // p(c | noisy) over all clean grid indices; throws invalid_input if the
    // noisy grid has zero marginal mass.
    std::vector<double> clean_given_noisy(const CodeGrid& noisy) const;

    // Draws (clean, noisy) with probability mass(clean, noisy).
    std::pair<CodeGrid, CodeGrid> sample_pair(Rng& rng) const;

private:
    std::size_t frames_ = 0;
    std::size_t depth_ = 0;
    std::size_t codebook_size_ = 0;
    std::uint64_t grid_count_ = 0;
    std::vector<double> probs_;
    std::vector<double> cumulative_;
};

/// Fixture family: clean grids from a nearest-neighbour agreement prior
/// p(c) ~ exp(coupling * #{equal adjacent pairs along frames and depths}),
/// observed through a per-position symmetric channel that keeps the code
/// with probability keep and otherwise moves uniformly to another code.
JointTable make_coupled_channel_table(std::size_t frames, std::size_t depth, std::size_t codebook_size,
                                      double coupling, double keep);

// The committed fixture: L=2, D=2, K=3, coupling 0.8, keep 0.75.
JointTable reference_joint_table();

struct PosteriorDiagnostics {
    std::size_t zero_mass_events = 0;
};

/// For each masked position, p(c^{ij} = k | unmasked clean codes, noisy)
/// by summing table mass over consistent clean grids. Unmasked positions get
/// a one-hot row on their observed code. A conditioning event with zero mass
/// yields uniform rows for the masked positions and bumps the diagnostics.
ConditionalProbs exact_posterior(const JointTable& table, const MaskedGrid& masked, const CodeGrid& noisy,
                                 PosteriorDiagnostics* diagnostics = nullptr);

/// ConditionalModel view of exact_posterior.
class ExactOracleModel final : public ConditionalModel {
public:
    explicit ExactOracleModel(JointTable table) : table_(std::move(table)) {}

    ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const override;
    std::size_t codebook_size() const override { return table_.codebook_size(); }
    std::string name() const override { return "exact-oracle"; }

    std::size_t zero_mass_events() const noexcept { return zero_mass_events_.load(); }

private:
    JointTable table_;
    mutable std::atomic<std::size_t> zero_mass_events_{0};
};

// JSON: {version, L, D, K, index_order, probs: [...]}.
void save_joint_table(const std::filesystem::path& path, const JointTable& table);
JointTable load_joint_table(const std::filesystem::path& path);

}  // namespace addse
