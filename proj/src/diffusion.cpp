// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/diffusion.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace addse {
namespace {

void check_time(const NoiseSchedule& sched, double t) {
    if (!(t >= 0.0 && t <= sched.horizon())) {
        fail(ErrorKind::range,
             "time " + std::to_string(t) + " outside [0, " + std::to_string(sched.horizon()) + "]");
    }
}

// sigma(tau) * Q^absorb * p, with Q applied structurally.
void absorbing_rhs(const NoiseSchedule& sched, double tau, const std::vector<double>& p, std::vector<double>& out) {
    const double rate = sched.sigma(tau);
    const std::size_t mask = p.size() - 1;
    double inflow = 0.0;
    for (std::size_t k = 0; k < mask; ++k) {
        out[k] = -rate * p[k];
        inflow += p[k];
    }
    out[mask] = rate * inflow;
}

}  // namespace

NoiseSchedule::NoiseSchedule(double horizon) : horizon_(horizon) {
    require(horizon > 0.0 && std::isfinite(horizon), ErrorKind::config, "NoiseSchedule: horizon must be positive");
}

double NoiseSchedule::lambda_at(double t) const {
    check_time(*this, t);
    return t / horizon_;
}

double NoiseSchedule::sigma(double t) const {
    check_time(*this, t);
    if (t == horizon_) {
        return std::numeric_limits<double>::infinity();
    }
    return 1.0 / (horizon_ - t);
}

double Matrix::column_sum(std::size_t c) const {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        acc += (*this)(r, c);
    }
    return acc;
}

void Distribution::validate(double tol) const {
    require(probs.size() >= 2, ErrorKind::invalid_input, "Distribution: need at least one regular state and the mask");
    double total = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        require(std::isfinite(probs[k]) && probs[k] >= 0.0, ErrorKind::invalid_input,
                "Distribution: entry " + std::to_string(k) + " is negative or non-finite");
        total += probs[k];
    }
    require(std::abs(total - 1.0) <= tol, ErrorKind::invalid_input,
            "Distribution: mass sums to " + std::to_string(total));
}

MaskedGrid forward_corrupt(const CodeGrid& codes, double lam, Rng& rng) {
    require(lam >= 0.0 && lam <= 1.0, ErrorKind::range, "forward_corrupt: lambda " + std::to_string(lam));
    codes.validate(false);
    MaskedGrid out = codes;
    for (std::size_t p = 0; p < out.size(); ++p) {
        if (rng.uniform() < lam) {
            out[p] = out.mask();
        }
    }
    return out;
}

Matrix absorbing_rate_matrix(std::size_t codebook_size) {
    require(codebook_size >= 1, ErrorKind::config, "absorbing_rate_matrix: K must be >= 1");
    Matrix q(codebook_size + 1, codebook_size + 1);
    for (std::size_t k = 0; k < codebook_size; ++k) {
        q(k, k) = -1.0;
        q(codebook_size, k) = 1.0;
    }
    return q;
}

Distribution solve_forward_exact(const Distribution& p0, const NoiseSchedule& sched, double t) {
    p0.validate(1e-9);
    check_time(sched, t);
    const double horizon = sched.horizon();
    const double nominal = 1e-4 * horizon;

    const bool to_horizon = t == horizon;
    const auto n_steps = static_cast<std::size_t>(std::ceil(t / nominal - 1e-9));
    if (n_steps == 0) {
        return p0;
    }
    const double h = t / static_cast<double>(n_steps);
    const std::size_t integrate_steps = to_horizon ? n_steps - 1 : n_steps;

    const std::size_t n = p0.probs.size();
    std::vector<double> p = p0.probs;
    std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
    for (std::size_t step = 0; step < integrate_steps; ++step) {
        const double tau = static_cast<double>(step) * h;
        absorbing_rhs(sched, tau, p, k1);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + 0.5 * h * k1[i];
        absorbing_rhs(sched, tau + 0.5 * h, tmp, k2);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + 0.5 * h * k2[i];
        absorbing_rhs(sched, tau + 0.5 * h, tmp, k3);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + h * k3[i];
        absorbing_rhs(sched, std::min(tau + h, horizon), tmp, k4);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    if (to_horizon) {
        // sigma diverges at T: every regular state is absorbed in the limit.
        double regular = 0.0;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            regular += p[k];
            p[k] = 0.0;
        }
        p[n - 1] += regular;
    }
    return Distribution{std::move(p)};
}

Distribution absorbing_marginal(const Distribution& p0, const NoiseSchedule& sched, double t) {
    p0.validate(1e-9);
    const double lam = sched.lambda_at(t);
    Distribution out = p0;
    const std::size_t mask = out.mask_state();
    double absorbed = 0.0;
    for (std::size_t k = 0; k < mask; ++k) {
        absorbed += lam * p0.probs[k];
        out.probs[k] = (1.0 - lam) * p0.probs[k];
    }
    out.probs[mask] = p0.probs[mask] + absorbed;
    return out;
}

Matrix reverse_rate_matrix(const Distribution& p_t, const NoiseSchedule& sched, double t) {
    p_t.validate(1e-9);
    const std::size_t n = p_t.states();
    const double rate = sched.sigma(t);
    const Matrix forward = absorbing_rate_matrix(n - 1);
    Matrix reverse(n, n);
    for (std::size_t src = 0; src < n; ++src) {
        const double denom = p_t.probs[src];
        if (denom == 0.0) {
            continue;  // unreachable in reverse time
        }
        double out_rate = 0.0;
        for (std::size_t dst = 0; dst < n; ++dst) {
            if (dst == src) {
                continue;
            }
            const double q = rate * forward(src, dst);
            // 0 * inf is a structural zero, not a rate.
            const double value = (p_t.probs[dst] == 0.0 || forward(src, dst) == 0.0) ? 0.0 : p_t.probs[dst] / denom * q;
            if (!std::isfinite(value)) {
                fail(ErrorKind::singularity, "reverse_rate_matrix: non-finite rate out of state " +
                                                 std::to_string(src) + " into state " + std::to_string(dst) +
                                                 " at t=" + std::to_string(t));
            }
            reverse(dst, src) = value;
            out_rate += value;
        }
        reverse(src, src) = -out_rate;
    }
    return reverse;
}

}  // namespace addse
