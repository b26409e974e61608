// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "addse/diffusion.hpp"
#include "addse/tabular.hpp"
#include "addse/training.hpp"

using namespace addse;

TEST_CASE("row indices are distinct across configurations and positions") {
    TabularModel model(1, 2, 2);
    CHECK(model.rows() == 4 * 9 * 2);
    std::set<std::uint64_t> seen;
    for (std::uint64_t n = 0; n < 4; ++n) {
        for (std::uint64_t m = 0; m < 9; ++m) {
            const auto noisy = grid_from_index(n, 1, 2, 2, 2);
            const auto masked = grid_from_index(m, 1, 2, 2, 3);
            for (std::size_t p = 0; p < 2; ++p) {
                seen.insert(model.row_index(masked, noisy, p));
            }
        }
    }
    CHECK(seen.size() == model.rows());
}

TEST_CASE("expected DCE of the uniform model is exactly log K") {
    // E_lambda[(1/lambda) |S| / n] = 1 for every clean grid.
    const auto table = make_coupled_channel_table(1, 3, 3, 0.5, 0.7);
    const UniformModel uniform(3);
    CHECK(expected_dce(uniform, table) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("expected DCE agrees with Monte Carlo over lambda ~ U(0, 1]") {
    const auto table = make_coupled_channel_table(1, 2, 2, 0.7, 0.8);
    const ExactOracleModel oracle(table);
    const double exact = expected_dce(oracle, table);
    Rng rng(5);
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const auto [clean, noisy] = table.sample_pair(rng);
        const double lam = 1.0 - rng.uniform();
        const auto masked = forward_corrupt(clean, lam, rng);
        acc += dce_loss(oracle.predict(masked, noisy), clean, masked, lam).normalized;
    }
    // heavy 1/lambda tail: loose tolerance
    CHECK(acc / n == doctest::Approx(exact).epsilon(0.05));
    CHECK(exact < std::log(2.0));
}

TEST_CASE("the exact posterior has zero gap and beats every other model") {
    const auto table = make_coupled_channel_table(1, 2, 3, 0.8, 0.75);
    const ExactOracleModel oracle(table);
    const auto gap = posterior_gap(oracle, table);
    CHECK(gap.max_kl < 1e-14);
    CHECK(gap.rows > 0);
    CHECK(expected_dce(oracle, table) < expected_dce(UniformModel(3), table));
}

TEST_CASE("exact-objective training reaches the posterior") {
    const auto table = make_coupled_channel_table(1, 2, 3, 0.8, 0.75);
    TabularModel model(1, 2, 3);
    TabularTrainOptions opts;
    opts.steps = 3000;
    const auto report = tabular_train(model, table, opts);
    CHECK(report.final_loss < report.initial_loss);
    CHECK(posterior_gap(model, table).max_kl < 1e-3);
    CHECK(expected_dce(model, table) == doctest::Approx(expected_dce(ExactOracleModel(table), table)).epsilon(1e-4));
}

TEST_CASE("stream-objective training lowers held-out DCE") {
    const auto table = make_coupled_channel_table(1, 2, 3, 0.8, 0.75);
    TabularModel model(1, 2, 3);
    TabularTrainOptions opts;
    opts.objective = TabularTrainOptions::Objective::stream;
    opts.steps = 20000;
    opts.lr = 0.02;
    opts.seed = 3;
    const auto report = tabular_train(model, table, opts);
    CHECK(report.final_loss < 0.9 * report.initial_loss);
}

TEST_CASE("tabular model persistence") {
    TabularModel model(1, 2, 2);
    Rng rng(1);
    for (double& v : model.params().values()) {
        v = rng.normal();
    }
    const auto path = std::filesystem::temp_directory_path() / "addse_test_tabular.json";
    save_tabular(path, model);
    const auto back = load_tabular(path);
    CHECK(std::equal(back.params().values().begin(), back.params().values().end(), model.params().values().begin()));
    std::filesystem::remove(path);
}
