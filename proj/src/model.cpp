// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace addse {

void ConditionalProbs::validate(double tol) const {
    require(values.size() == positions() * codebook_size, ErrorKind::model_output,
            "ConditionalProbs: inconsistent storage size");
    for (std::size_t p = 0; p < positions(); ++p) {
        double total = 0.0;
        for (double v : row(p)) {
            if (!std::isfinite(v) || v < 0.0) {
                fail(ErrorKind::model_output, "invalid probability row at position " + std::to_string(p) +
                                                  " (frame " + std::to_string(p / depth) + ", depth " +
                                                  std::to_string(p % depth) + "): negative or non-finite entry");
            }
            total += v;
        }
        if (std::abs(total - 1.0) > tol) {
            fail(ErrorKind::model_output, "invalid probability row at position " + std::to_string(p) +
                                              ": sums to " + std::to_string(total));
        }
    }
}

void softmax_rows(ConditionalProbs& logits) {
    for (std::size_t p = 0; p < logits.positions(); ++p) {
        auto r = logits.row(p);
        const double top = *std::max_element(r.begin(), r.end());
        double total = 0.0;
        for (double& v : r) {
            v = std::exp(v - top);
            total += v;
        }
        for (double& v : r) {
            v /= total;
        }
    }
}

void ConditionalModel::check_inputs(const MaskedGrid& masked, const CodeGrid& noisy) const {
    require(masked.same_shape(noisy), ErrorKind::config,
            "model input shapes differ: masked " + std::to_string(masked.frames()) + "x" +
                std::to_string(masked.depth()) + " vs noisy " + std::to_string(noisy.frames()) + "x" +
                std::to_string(noisy.depth()));
    require(masked.codebook_size() == codebook_size(), ErrorKind::config,
            name() + ": input K=" + std::to_string(masked.codebook_size()) + " but model K=" +
                std::to_string(codebook_size()));
}

ConditionalProbs UniformModel::predict(const MaskedGrid& masked, const CodeGrid& noisy) const {
    check_inputs(masked, noisy);
    return ConditionalProbs(masked.frames(), masked.depth(), codebook_size_,
                            1.0 / static_cast<double>(codebook_size_));
}

ConditionalProbs FixedModel::predict(const MaskedGrid& masked, const CodeGrid& noisy) const {
    check_inputs(masked, noisy);
    require(rows_.matches(masked), ErrorKind::config, "FixedModel: grid shape differs from the stored rows");
    return rows_;
}

}  // namespace addse
