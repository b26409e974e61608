// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "addse/grid.hpp"
#include "addse/rng.hpp"

namespace addse {

/// Log-linear absorbing schedule on [0, T]:
///   sigma(t)  = 1 / (T - t)
///   lambda(t) = 1 - exp(-int_0^t sigma) = t / T
/// lambda is the probability that a position has been absorbed by time t,
/// so the reverse coefficient (t - s) / t equals (lambda_t - lambda_s) / lambda_t.
class NoiseSchedule {
public:
    explicit NoiseSchedule(double horizon = 1.0);

    double horizon() const noexcept { return horizon_; }

    // Throws range outside [0, T].
    double lambda_at(double t) const;

    // +inf at t == T.
    double sigma(double t) const;

private:
    double horizon_;
};

/// Dense row-major matrix, just enough for (K+1) x (K+1) rate matrices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double column_sum(std::size_t c) const;
};

/// Probability vector over K + 1 states; the last entry is the mask.
struct Distribution {
    std::vector<double> probs;

    std::size_t states() const noexcept { return probs.size(); }
    std::size_t mask_state() const noexcept { return probs.size() - 1; }
    // Non-negative, finite, sums to one within tol.
    void validate(double tol = 1e-12) const;
};

/// Each position of a mask-free grid is independently replaced by the mask
/// with probability lam. One uniform is consumed per position, row-major.
MaskedGrid forward_corrupt(const CodeGrid& codes, double lam, Rng& rng);

/// Q^absorb for K regular states: -1 on the first K diagonal entries, +1 in
/// the mask row for the first K columns. Columns are source states
/// (dp/dt = Q p).
Matrix absorbing_rate_matrix(std::size_t codebook_size);

/// Integrates dp/dt = sigma(t) Q^absorb p from 0 to t with classical RK4 at
/// step 1e-4 T. Oracle only. sigma is singular at T, so a request for t == T
/// integrates to the last grid point before T and then applies the limiting
/// transition (all remaining regular mass absorbed).
Distribution solve_forward_exact(const Distribution& p0, const NoiseSchedule& sched, double t);

/// Analytic marginal (1 - lambda) p0 + lambda delta_M for a mask-free p0
/// (a general p0 keeps its existing mask mass as well).
Distribution absorbing_marginal(const Distribution& p0, const NoiseSchedule& sched, double t);

/// Time-reversal rates: Qbar[m][n] = (p^m / p^n) Q[n][m] for m != n, diagonal
/// equal to minus the off-diagonal column sum. A source state n with p^n == 0
/// is unreachable in reverse time and gets no outgoing rate. Any rate that
/// still comes out non-finite (t == T, or an underflowing p^n) throws
/// singularity naming the source state.
Matrix reverse_rate_matrix(const Distribution& p_t, const NoiseSchedule& sched, double t);

}  // namespace addse
