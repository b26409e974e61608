// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/params.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace addse {

std::size_t ParamStore::add(std::string name, std::vector<std::size_t> shape) {
    const std::size_t size = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    tensors_.push_back(ParamTensor{std::move(name), std::move(shape), values_.size(), size});
    values_.resize(values_.size() + size, 0.0);
    grads_.resize(grads_.size() + size, 0.0);
    return tensors_.size() - 1;
}

std::size_t ParamStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].name == name) {
            return i;
        }
    }
    fail(ErrorKind::config, "no parameter tensor named '" + name + "'");
}

const std::string& ParamStore::owner(std::size_t flat) const {
    auto it = std::upper_bound(tensors_.begin(), tensors_.end(), flat,
                               [](std::size_t f, const ParamTensor& t) { return f < t.offset; });
    require(it != tensors_.begin() && flat < values_.size(), ErrorKind::invalid_input, "flat index out of range");
    return std::prev(it)->name;
}

void ParamStore::zero_grad() {
    std::fill(grads_.begin(), grads_.end(), 0.0);
}

namespace {

void check_batch(std::span<const MaskedGrid> masked, std::span<const CodeGrid> noisy) {
    require(!masked.empty() && masked.size() == noisy.size(), ErrorKind::config,
            "batch: masked and noisy counts differ or are zero");
    for (const auto& g : masked) {
        require(g.same_shape(masked.front()), ErrorKind::config, "batch: examples must share one shape");
    }
}

}  // namespace

ConditionalProbs TrainableModel::forward_logits_batch(std::span<const MaskedGrid> masked,
                                                      std::span<const CodeGrid> noisy) {
    check_batch(masked, noisy);
    batch_masked_.assign(masked.begin(), masked.end());
    batch_noisy_.assign(noisy.begin(), noisy.end());
    const auto& first = masked.front();
    ConditionalProbs out(first.frames() * masked.size(), first.depth(), codebook_size());
    auto at = out.values.begin();
    for (std::size_t b = 0; b < masked.size(); ++b) {
        const auto logits = forward_logits(masked[b], noisy[b]);
        at = std::copy(logits.values.begin(), logits.values.end(), at);
    }
    return out;
}

void TrainableModel::backward_batch(const ConditionalProbs& dlogits) {
    require(!batch_masked_.empty(), ErrorKind::usage, name() + ": backward_batch without forward_logits_batch");
    const auto& first = batch_masked_.front();
    require(dlogits.frames == first.frames() * batch_masked_.size() && dlogits.depth == first.depth(),
            ErrorKind::config, name() + ": batch gradient shape mismatch");
    const std::size_t stride = first.size() * codebook_size();
    for (std::size_t b = 0; b < batch_masked_.size(); ++b) {
        forward_logits(batch_masked_[b], batch_noisy_[b]);
        ConditionalProbs slice(first.frames(), first.depth(), codebook_size());
        std::copy_n(dlogits.values.begin() + static_cast<std::ptrdiff_t>(b * stride), stride, slice.values.begin());
        backward(slice);
    }
    batch_masked_.clear();
    batch_noisy_.clear();
}

}  // namespace addse
