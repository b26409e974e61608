// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "addse/params.hpp"

namespace addse {

// Scales grads in place so their global l2 norm is at most max_norm;
// returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
};

/// Global-norm clipping followed by a bias-corrected Adam update with
/// decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    struct StepStats {
        double grad_norm = 0.0;
        bool clipped = false;
    };

    StepStats step(std::span<double> params, std::span<double> grads);
    StepStats step(ParamStore& store) { return step(store.values(), store.grads()); }

    const AdamWConfig& config() const noexcept { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::size_t steps_taken() const noexcept { return t_; }

private:
    AdamWConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

}  // namespace addse
