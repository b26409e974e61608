// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "addse/model.hpp"

namespace addse {

struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Flat parameter/gradient storage with named tensor views. Optimizers,
/// checkpoints and gradient checks all operate on the flat arrays.
class ParamStore {
public:
    // Returns the tensor index. Views handed out earlier stay valid only
    // until the next add().
    std::size_t add(std::string name, std::vector<std::size_t> shape);

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> grads() noexcept { return grads_; }
    std::span<const double> grads() const noexcept { return grads_; }

    std::span<double> value(std::size_t tensor) { return {values_.data() + tensors_[tensor].offset, tensors_[tensor].size}; }
    std::span<const double> value(std::size_t tensor) const {
        return {values_.data() + tensors_[tensor].offset, tensors_[tensor].size};
    }
    std::span<double> grad(std::size_t tensor) { return {grads_.data() + tensors_[tensor].offset, tensors_[tensor].size}; }

    const std::vector<ParamTensor>& tensors() const noexcept { return tensors_; }
    std::size_t find(const std::string& name) const;  // throws config if absent
    std::size_t size() const noexcept { return values_.size(); }

    // Name of the tensor owning flat index `flat`.
    const std::string& owner(std::size_t flat) const;

    void zero_grad();

private:
    std::vector<ParamTensor> tensors_;
    std::vector<double> values_;
    std::vector<double> grads_;
};

/// A ConditionalModel whose logits can be differentiated. forward_logits()
/// keeps whatever activations backward() needs; backward() accumulates into
/// params().grads() for the most recent forward.
class TrainableModel : public ConditionalModel {
public:
    virtual ConditionalProbs forward_logits(const MaskedGrid& masked, const CodeGrid& noisy) = 0;
    virtual void backward(const ConditionalProbs& dlogits) = 0;

    // Logits for equally shaped examples stacked along the frame axis. The
    // default keeps copies of the inputs and re-runs each example inside
    // backward_batch.
    virtual ConditionalProbs forward_logits_batch(std::span<const MaskedGrid> masked,
                                                  std::span<const CodeGrid> noisy);
    virtual void backward_batch(const ConditionalProbs& dlogits);

    virtual ParamStore& params() = 0;
    virtual const ParamStore& params() const = 0;

private:
    std::vector<MaskedGrid> batch_masked_;
    std::vector<CodeGrid> batch_noisy_;
};

}  // namespace addse
