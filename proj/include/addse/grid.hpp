// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "addse/error.hpp"

namespace addse {

using Code = std::int32_t;

/// L x D array of codes in {0..K-1}, plus the mask value K.
///
/// Codes are 0-indexed; the absorbing state sits at index K (the 1-indexed
/// convention M = K + 1 shifted down by one). Storage is row-major
/// (frame, depth), which is also the order in which samplers consume
/// randomness.
class CodeGrid {
public:
    CodeGrid() = default;
    CodeGrid(std::size_t frames, std::size_t depth, std::size_t codebook_size, Code fill = 0);

    static CodeGrid fully_masked(std::size_t frames, std::size_t depth, std::size_t codebook_size) {
        return CodeGrid(frames, depth, codebook_size, static_cast<Code>(codebook_size));
    }

    std::size_t frames() const noexcept { return frames_; }
    std::size_t depth() const noexcept { return depth_; }
    std::size_t codebook_size() const noexcept { return codebook_size_; }
    std::size_t size() const noexcept { return codes_.size(); }
    Code mask() const noexcept { return static_cast<Code>(codebook_size_); }

    Code& operator()(std::size_t i, std::size_t j) { return codes_[i * depth_ + j]; }
    Code operator()(std::size_t i, std::size_t j) const { return codes_[i * depth_ + j]; }
    Code& operator[](std::size_t flat) { return codes_[flat]; }
    Code operator[](std::size_t flat) const { return codes_[flat]; }

    bool is_masked(std::size_t flat) const { return codes_[flat] == mask(); }
    std::size_t mask_count() const;
    bool has_mask() const { return mask_count() > 0; }

    std::span<const Code> codes() const noexcept { return codes_; }
    std::span<Code> codes() noexcept { return codes_; }

    bool same_shape(const CodeGrid& other) const {
        return frames_ == other.frames_ && depth_ == other.depth_ && codebook_size_ == other.codebook_size_;
    }

    // Throws invalid_input if any entry lies outside {0..K} (or {0..K-1}
    // when allow_mask is false).
    void validate(bool allow_mask) const;

    friend bool operator==(const CodeGrid&, const CodeGrid&) = default;

private:
    std::size_t frames_ = 0;
    std::size_t depth_ = 0;
    std::size_t codebook_size_ = 0;
    std::vector<Code> codes_;
};

// A grid in which masks are permitted; same representation.
using MaskedGrid = CodeGrid;

// Fraction of positions where two mask-free grids agree.
double token_accuracy(const CodeGrid& a, const CodeGrid& b);

/// Mixed-radix index of a mask-free grid (row-major, first position most
/// significant). Used by the enumeration oracles and tabular models.
std::uint64_t grid_index(const CodeGrid& grid, std::size_t radix);
CodeGrid grid_from_index(std::uint64_t index, std::size_t frames, std::size_t depth, std::size_t codebook_size,
                         std::size_t radix);

// radix^positions, or throws capacity if it would exceed limit.
std::uint64_t checked_power(std::size_t radix, std::size_t positions, std::uint64_t limit);

}  // namespace addse
