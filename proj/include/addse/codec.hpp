// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "addse/grid.hpp"

namespace addse {

/// L x H real latent sequence, row-major.
struct LatentSeq {
    std::size_t frames = 0;
    std::size_t dim = 0;
    std::vector<double> values;

    LatentSeq() = default;
    LatentSeq(std::size_t frames_, std::size_t dim_) : frames(frames_), dim(dim_), values(frames_ * dim_, 0.0) {}

    std::span<double> frame(std::size_t i) { return {values.data() + i * dim, dim}; }
    std::span<const double> frame(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

/// D codebooks of K entries in R^H; entry (j, k) is the k-th vector of the
/// j-th quantizer stage. Immutable once built.
class CodebookSet {
public:
    CodebookSet() = default;
    // entries laid out depth -> index -> dimension. Validates finiteness and
    // distinctness within each codebook.
    CodebookSet(std::size_t depth, std::size_t codebook_size, std::size_t dim, std::vector<double> entries);

    std::size_t depth() const noexcept { return depth_; }
    std::size_t codebook_size() const noexcept { return codebook_size_; }
    std::size_t dim() const noexcept { return dim_; }

    std::span<const double> entry(std::size_t j, std::size_t k) const {
        return {entries_.data() + (j * codebook_size_ + k) * dim_, dim_};
    }
    std::span<const double> entries() const noexcept { return entries_; }

    // First `depth` stages of this set; RVQ codebooks are nested so this is
    // the codec one would obtain by training fewer stages.
    CodebookSet truncated(std::size_t depth) const;

    friend bool operator==(const CodebookSet&, const CodebookSet&) = default;

private:
    std::size_t depth_ = 0;
    std::size_t codebook_size_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> entries_;
};

/// Residual quantization: at each depth, pick the entry nearest (squared
/// Euclidean) to the running residual, ties to the smallest index, then
/// subtract it. If `residuals` is given it receives the final residual
/// r^{i,D} per frame.
CodeGrid rvq_encode(const LatentSeq& latents, const CodebookSet& books, LatentSeq* residuals = nullptr);

/// Codebook lookup and summation over depths. Masked grids are rejected.
LatentSeq rvq_decode(const CodeGrid& codes, const CodebookSet& books);

struct CodebookTrainingOptions {
    std::size_t depth = 4;
    std::size_t codebook_size = 1024;
    std::size_t iterations = 50;
    std::uint64_t seed = 0;
};

/// Offline residual k-means: codebook j is fit (Lloyd iterations, k-means++
/// seeding) on the residuals left by stages 1..j-1. Empty clusters are
/// re-seeded from the point farthest from its centroid.
CodebookSet train_codebooks(std::span<const LatentSeq> dataset, const CodebookTrainingOptions& options);

double mean_squared_error(const LatentSeq& a, const LatentSeq& b);

// JSON: {version, D, K, H, entries: [[[..H..] x K] x D]}, doubles written
// with round-trip precision.
void save_codebooks(const std::filesystem::path& path, const CodebookSet& books);
CodebookSet load_codebooks(const std::filesystem::path& path);

}  // namespace addse
