// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/optim.hpp"

#include <cmath>

#include "addse/error.hpp"

namespace addse {

double clip_grad_norm(std::span<double> grads, double max_norm) {
    double sq = 0.0;
    for (double g : grads) {
        sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (double& g : grads) {
            g *= scale;
        }
    }
    return norm;
}

AdamW::StepStats AdamW::step(std::span<double> params, std::span<double> grads) {
    require(params.size() == grads.size(), ErrorKind::config, "AdamW: parameter/gradient size mismatch");
    if (m_.empty()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
    }
    require(m_.size() == params.size(), ErrorKind::config, "AdamW: parameter count changed between steps");

    StepStats stats;
    stats.grad_norm = clip_grad_norm(grads, cfg_.clip_norm);
    stats.clipped = cfg_.clip_norm > 0.0 && stats.grad_norm > cfg_.clip_norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        params[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }
    return stats;
}

}  // namespace addse
