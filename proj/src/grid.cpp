// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/grid.hpp"

#include <algorithm>
#include <string>

namespace addse {

CodeGrid::CodeGrid(std::size_t frames, std::size_t depth, std::size_t codebook_size, Code fill)
    : frames_(frames), depth_(depth), codebook_size_(codebook_size), codes_(frames * depth, fill) {
    require(codebook_size >= 1, ErrorKind::config, "CodeGrid: codebook size must be >= 1");
}

std::size_t CodeGrid::mask_count() const {
    return static_cast<std::size_t>(std::count(codes_.begin(), codes_.end(), mask()));
}

void CodeGrid::validate(bool allow_mask) const {
    const Code hi = allow_mask ? mask() : mask() - 1;
    for (std::size_t p = 0; p < codes_.size(); ++p) {
        if (codes_[p] < 0 || codes_[p] > hi) {
            fail(ErrorKind::invalid_input, "CodeGrid: entry " + std::to_string(codes_[p]) + " at position " +
                                               std::to_string(p) + " outside [0, " + std::to_string(hi) + "]");
        }
    }
}

double token_accuracy(const CodeGrid& a, const CodeGrid& b) {
    require(a.same_shape(b), ErrorKind::config, "token_accuracy: shape mismatch");
    if (a.size() == 0) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        hits += a[p] == b[p] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(a.size());
}

std::uint64_t grid_index(const CodeGrid& grid, std::size_t radix) {
    std::uint64_t index = 0;
    for (std::size_t p = 0; p < grid.size(); ++p) {
        index = index * radix + static_cast<std::uint64_t>(grid[p]);
    }
    return index;
}

CodeGrid grid_from_index(std::uint64_t index, std::size_t frames, std::size_t depth, std::size_t codebook_size,
                         std::size_t radix) {
    CodeGrid grid(frames, depth, codebook_size);
    for (std::size_t p = grid.size(); p-- > 0;) {
        grid[p] = static_cast<Code>(index % radix);
        index /= radix;
    }
    return grid;
}

std::uint64_t checked_power(std::size_t radix, std::size_t positions, std::uint64_t limit) {
    std::uint64_t value = 1;
    for (std::size_t p = 0; p < positions; ++p) {
        if (value > limit / radix) {
            fail(ErrorKind::capacity, std::to_string(radix) + "^" + std::to_string(positions) +
                                          " configurations exceed the enumeration limit " + std::to_string(limit));
        }
        value *= radix;
    }
    return value;
}

}  // namespace addse
