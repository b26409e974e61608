// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "addse/error.hpp"
#include "addse/joint_table.hpp"
#include "addse/sampler.hpp"

using namespace addse;

namespace {

ConditionalProbs random_rows(std::size_t l, std::size_t d, std::size_t k, Rng& rng) {
    ConditionalProbs out(l, d, k);
    for (std::size_t p = 0; p < out.positions(); ++p) {
        double total = 0.0;
        for (double& v : out.row(p)) {
            v = rng.uniform() + 0.05;
            total += v;
        }
        for (double& v : out.row(p)) {
            v /= total;
        }
    }
    return out;
}

// Returns the grid unchanged in every row; counts calls.
class CountingModel final : public ConditionalModel {
public:
    explicit CountingModel(ConditionalProbs rows) : rows_(std::move(rows)) {}
    ConditionalProbs predict(const MaskedGrid&, const CodeGrid&) const override {
        ++calls;
        return rows_;
    }
    std::size_t codebook_size() const override { return rows_.codebook_size; }
    std::string name() const override { return "counting"; }
    mutable std::size_t calls = 0;

private:
    ConditionalProbs rows_;
};

class BrokenModel final : public ConditionalModel {
public:
    ConditionalProbs predict(const MaskedGrid& m, const CodeGrid&) const override {
        ConditionalProbs out(m.frames(), m.depth(), 2, 0.5);
        out.row(1)[0] = 0.9;
        return out;
    }
    std::size_t codebook_size() const override { return 2; }
    std::string name() const override { return "broken"; }
};

}  // namespace

TEST_CASE("step grid is uniform and ends at zero") {
    const auto g = step_grid(4, 2.0);
    REQUIRE(g.size() == 4);
    CHECK(g[0].first == 2.0);
    CHECK(g[0].second == 1.5);
    CHECK(g[3].first == 0.5);
    CHECK(g[3].second == 0.0);
    for (std::size_t i = 0; i + 1 < g.size(); ++i) {
        CHECK(g[i].second == g[i + 1].first);
    }
    CHECK_THROWS_AS(step_grid(0), Error);
}

TEST_CASE("reverse_step replays against a manual RNG") {
    Rng rows_rng(1);
    const auto probs = random_rows(5, 3, 4, rows_rng);
    MaskedGrid grid = MaskedGrid::fully_masked(5, 3, 4);
    grid[4] = 2;
    grid[7] = 0;
    const MaskedGrid before = grid;
    const double t = 0.8;
    const double s = 0.5;
    Rng a(17);
    Rng b(17);
    const std::size_t unmasked = reverse_step(grid, probs, t, s, a);
    std::size_t expect_unmasked = 0;
    for (std::size_t p = 0; p < grid.size(); ++p) {
        if (!before.is_masked(p)) {
            CHECK(grid[p] == before[p]);
            continue;
        }
        if (!(b.uniform() < (t - s) / t)) {
            CHECK(grid.is_masked(p));
            continue;
        }
        ++expect_unmasked;
        const double u = b.uniform();
        double acc = 0.0;
        std::size_t code = 3;
        for (std::size_t k = 0; k < 4; ++k) {
            acc += probs.row(p)[k];
            if (u < acc) {
                code = k;
                break;
            }
        }
        CHECK(grid[p] == static_cast<Code>(code));
    }
    CHECK(unmasked == expect_unmasked);
    CHECK(a.next() == b.next());
}

TEST_CASE("final step unmasks everything; argmax mode picks the mode") {
    Rng rows_rng(2);
    const auto probs = random_rows(4, 2, 5, rows_rng);
    MaskedGrid grid = MaskedGrid::fully_masked(4, 2, 5);
    Rng rng(3);
    CHECK(reverse_step(grid, probs, 0.25, 0.0, rng, DecodeMode::argmax) == 8);
    for (std::size_t p = 0; p < grid.size(); ++p) {
        const auto row = probs.row(p);
        CHECK(grid[p] == static_cast<Code>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    CHECK_THROWS_AS(reverse_step(grid, probs, 0.5, 0.5, rng), Error);
}

TEST_CASE("invalid rows are rejected with the position") {
    const BrokenModel model;
    CodeGrid noisy(2, 1, 2);
    SamplerConfig cfg;
    cfg.n_steps = 1;
    try {
        sample(model, noisy, cfg);
        FAIL("expected model_output");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::model_output);
        CHECK(std::string(e.what()).find("position 1") != std::string::npos);
    }
}

TEST_CASE("one step costs one evaluation and leaves no masks") {
    Rng rows_rng(4);
    const CountingModel model(random_rows(6, 2, 3, rows_rng));
    SamplerConfig cfg;
    cfg.n_steps = 1;
    const auto [grid, trace] = sample(model, CodeGrid(6, 2, 3), cfg);
    CHECK(trace.nfe == 1);
    CHECK(model.calls == 1);
    CHECK(!grid.has_mask());
    CHECK(trace.final_mask_count == 0);
}

TEST_CASE("NFE bound and cache transparency") {
    Rng rows_rng(5);
    const CountingModel model(random_rows(10, 2, 3, rows_rng));
    const CodeGrid noisy(10, 2, 3);
    for (std::size_t n : {1u, 3u, 20u, 21u, 64u, 500u}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            SamplerConfig cfg;
            cfg.n_steps = n;
            cfg.seed = seed;
            const auto [grid, trace] = sample(model, noisy, cfg);
            CHECK(trace.nfe <= std::min<std::size_t>(n, 21));
            CHECK(trace.steps.size() == n);
            CHECK(trace.steps[0].evaluated);
            std::size_t evaluated = 0;
            for (std::size_t i = 0; i < n; ++i) {
                evaluated += trace.steps[i].evaluated ? 1 : 0;
                if (i > 0) {
                    CHECK(trace.steps[i].evaluated == (trace.steps[i - 1].unmask_count > 0));
                }
            }
            CHECK(evaluated == trace.nfe);
            cfg.reuse_predictions = false;
            const auto [grid2, trace2] = sample(model, noisy, cfg);
            CHECK(grid2 == grid);
            CHECK(trace2.nfe == n);
        }
    }
}

TEST_CASE("one-step law is the product of the all-masked rows") {
    Rng rows_rng(6);
    const auto rows = random_rows(1, 2, 3, rows_rng);
    const FixedModel model(rows);
    const CodeGrid noisy(1, 2, 3);
    const auto law = expected_distribution_one_step(model, noisy);
    REQUIRE(law.size() == 9);
    CHECK(law[1 * 3 + 2] == doctest::Approx(rows.row(0)[1] * rows.row(1)[2]));
    std::vector<double> hist(9, 0.0);
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
        SamplerConfig cfg;
        cfg.n_steps = 1;
        cfg.seed = derive_seed(1, static_cast<std::uint64_t>(i));
        hist[grid_index(sample(model, noisy, cfg).first, 3)] += 1.0 / n;
    }
    CHECK(total_variation(hist, law) < 0.01);
}

TEST_CASE("many-step sampler with the exact posterior reproduces p(c | noisy)") {
    const auto table = make_coupled_channel_table(1, 2, 2, 1.0, 0.8);
    const ExactOracleModel model(table);
    const auto noisy = table.grid(1);
    const auto truth = table.clean_given_noisy(noisy);
    std::vector<double> hist(truth.size(), 0.0);
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        SamplerConfig cfg;
        cfg.n_steps = 64;
        cfg.seed = derive_seed(2, static_cast<std::uint64_t>(i));
        hist[grid_index(sample(model, noisy, cfg).first, 2)] += 1.0 / n;
    }
    CHECK(total_variation(hist, truth) < 0.015);
}

TEST_CASE("trace JSON lines") {
    const UniformModel model(3);
    SamplerConfig cfg;
    cfg.n_steps = 3;
    const auto trace = sample(model, CodeGrid(2, 2, 3), cfg).second;
    std::ostringstream out;
    trace.write_jsonl(out);
    std::istringstream in(out.str());
    std::string line;
    int lines = 0;
    std::string last;
    while (std::getline(in, line)) {
        ++lines;
        last = line;
    }
    CHECK(lines == 4);
    CHECK(last.find("\"nfe\"") != std::string::npos);
    CHECK(last.find("\"n_steps\":3") != std::string::npos);
}

TEST_CASE("sampler input checks") {
    const UniformModel model(3);
    SamplerConfig cfg;
    CHECK_THROWS_AS(sample(model, CodeGrid(2, 2, 4), cfg), Error);
    CHECK_THROWS_AS(sample(model, CodeGrid::fully_masked(2, 2, 3), cfg), Error);
    cfg.n_steps = 0;
    CHECK_THROWS_AS(sample(model, CodeGrid(2, 2, 3), cfg), Error);
}
