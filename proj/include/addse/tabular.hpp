// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>

#include "addse/joint_table.hpp"
#include "addse/params.hpp"

namespace addse {

/// One free logit vector per (noisy grid, masked grid, position). Masked
/// grids are indexed with radix K + 1 so the mask is an ordinary digit.
/// Rows at unmasked positions exist but are never trained.
class TabularModel final : public TrainableModel {
public:
    static constexpr std::uint64_t kMaxRows = 1'000'000;

    TabularModel(std::size_t frames, std::size_t depth, std::size_t codebook_size);

    std::size_t frames() const noexcept { return frames_; }
    std::size_t depth() const noexcept { return depth_; }
    std::size_t codebook_size() const override { return codebook_size_; }
    std::string name() const override { return "tabular"; }
    std::uint64_t rows() const noexcept { return rows_; }

    std::uint64_t row_index(const MaskedGrid& masked, const CodeGrid& noisy, std::size_t position) const;

    ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const override;
    ConditionalProbs forward_logits(const MaskedGrid& masked, const CodeGrid& noisy) override;
    void backward(const ConditionalProbs& dlogits) override;

    ParamStore& params() override { return params_; }
    const ParamStore& params() const override { return params_; }

private:
    std::size_t frames_;
    std::size_t depth_;
    std::size_t codebook_size_;
    std::uint64_t noisy_count_;
    std::uint64_t masked_count_;
    std::uint64_t rows_;
    ParamStore params_;
    std::vector<std::uint64_t> last_rows_;
};

struct TabularTrainOptions {
    enum class Objective {
        // Gradient of the expected DCE, enumerated from the joint table; each
        // configuration row descends its own conditional cross-entropy.
        exact,
        // Single-sample stochastic DCE gradients from pairs drawn from the table.
        stream,
    };
    Objective objective = Objective::exact;
    std::size_t steps = 5000;
    double lr = 0.1;
    double momentum = 0.9;
    double lambda_min = 1e-3;  // stream only
    std::uint64_t seed = 0;
};

struct TabularTrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Momentum SGD on the conditional DCE. Loss is measured on a held-out
/// stream (stream objective) or as the exact expected DCE (exact objective).
/// Throws training if the loss becomes NaN.
TabularTrainReport tabular_train(TabularModel& model, const JointTable& table, const TabularTrainOptions& options);

/// Exact expected DCE of any model on a joint table with lambda ~ U[0, 1]:
/// sum over (clean, noisy) mass and mask patterns S of
/// Beta(|S|, n - |S| + 1) * sum_{p in S} -log q(c_p) / n.
double expected_dce(const ConditionalModel& model, const JointTable& table);

/// Mean over reachable (noisy, masked) configurations and masked positions
/// of KL(exact posterior || model row); also reports the worst row.
struct PosteriorGap {
    double mean_kl = 0.0;
    double max_kl = 0.0;
    std::size_t rows = 0;
};
PosteriorGap posterior_gap(const ConditionalModel& model, const JointTable& table);

// JSON: {version, L, D, K, rows, logits: [[..K..] x rows]}.
void save_tabular(const std::filesystem::path& path, const TabularModel& model);
TabularModel load_tabular(const std::filesystem::path& path);

}  // namespace addse
