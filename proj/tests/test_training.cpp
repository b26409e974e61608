// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "addse/diffusion.hpp"
#include "addse/error.hpp"
#include "addse/tabular.hpp"
#include "addse/training.hpp"

using namespace addse;

namespace {

CodebookSet random_books(std::size_t d, std::size_t k, std::size_t h, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> e(d * k * h);
    for (double& v : e) {
        v = rng.normal();
    }
    return CodebookSet(d, k, h, e);
}

ConditionalProbs random_logits(std::size_t l, std::size_t d, std::size_t k, Rng& rng) {
    ConditionalProbs out(l, d, k);
    for (double& v : out.values) {
        v = 2.0 * rng.normal();
    }
    return out;
}

CodeGrid random_grid(std::size_t l, std::size_t d, std::size_t k, Rng& rng) {
    CodeGrid g(l, d, k);
    for (std::size_t p = 0; p < g.size(); ++p) {
        g[p] = static_cast<Code>(rng.below(k));
    }
    return g;
}

// Emits NaN logits: divergence must surface as a training error.
class NanModel final : public TrainableModel {
public:
    ConditionalProbs predict(const MaskedGrid& m, const CodeGrid&) const override {
        return ConditionalProbs(m.frames(), m.depth(), 2, 0.5);
    }
    ConditionalProbs forward_logits(const MaskedGrid& m, const CodeGrid&) override {
        return ConditionalProbs(m.frames(), m.depth(), 2, std::numeric_limits<double>::quiet_NaN());
    }
    void backward(const ConditionalProbs&) override {}
    std::size_t codebook_size() const override { return 2; }
    std::string name() const override { return "nan"; }
    ParamStore& params() override { return store_; }
    const ParamStore& params() const override { return store_; }

private:
    ParamStore store_;
};

}  // namespace

TEST_CASE("dce_loss by hand") {
    ConditionalProbs probs(1, 2, 2);
    probs.row(0)[0] = 0.25;
    probs.row(0)[1] = 0.75;
    probs.row(1)[0] = 0.5;
    probs.row(1)[1] = 0.5;
    CodeGrid clean(1, 2, 2);
    clean[0] = 1;
    clean[1] = 0;
    MaskedGrid masked = clean;
    masked[0] = masked.mask();
    const auto v = dce_loss(probs, clean, masked, 0.5);
    CHECK(v.masked == 1);
    CHECK(v.unnormalized == doctest::Approx(-std::log(0.75) / 0.5));
    CHECK(v.normalized == doctest::Approx(-std::log(0.75) / 0.5 / 2.0));
    // no masked position -> zero loss
    CHECK(dce_loss(probs, clean, clean, 0.5).normalized == 0.0);
}

TEST_CASE("zero probability on the true code is an infinite loss with its position") {
    ConditionalProbs probs(1, 2, 2);
    probs.row(0)[0] = 1.0;
    probs.row(1)[0] = 1.0;
    CodeGrid clean(1, 2, 2, 1);
    const auto masked = MaskedGrid::fully_masked(1, 2, 2);
    const auto v = dce_loss(probs, clean, masked, 1.0);
    CHECK(std::isinf(v.normalized));
    CHECK(v.infinite_positions == std::vector<std::size_t>{0, 1});
}

TEST_CASE("lambda outside (0, 1] is rejected") {
    ConditionalProbs probs(1, 1, 2, 0.5);
    CodeGrid clean(1, 1, 2);
    for (double lam : {0.0, -0.2, 1.01}) {
        try {
            dce_loss(probs, clean, clean, lam);
            FAIL("expected range error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::range);
        }
    }
}

TEST_CASE("logit gradient matches finite differences") {
    Rng rng(1);
    const auto logits = random_logits(3, 2, 5, rng);
    const auto clean = random_grid(3, 2, 5, rng);
    MaskedGrid masked = clean;
    for (std::size_t p = 0; p < masked.size(); p += 2) {
        masked[p] = masked.mask();
    }
    const double lam = 0.37;
    ConditionalProbs grad;
    const auto v = dce_loss_from_logits(logits, clean, masked, lam, &grad);
    auto probs = logits;
    softmax_rows(probs);
    CHECK(v.normalized == doctest::Approx(dce_loss(probs, clean, masked, lam).normalized).epsilon(1e-12));
    for (std::size_t i = 0; i < logits.values.size(); ++i) {
        auto up = logits;
        auto down = logits;
        up.values[i] += 1e-6;
        down.values[i] -= 1e-6;
        const double fd = (dce_loss_from_logits(up, clean, masked, lam, nullptr).normalized -
                           dce_loss_from_logits(down, clean, masked, lam, nullptr).normalized) /
                          2e-6;
        CHECK(std::abs(fd - grad.values[i]) < 1e-8);
    }
    // closed form at one masked entry
    const std::size_t p = 0;
    const auto target = static_cast<std::size_t>(clean[p]);
    CHECK(grad.row(p)[target] == doctest::Approx((probs.row(p)[target] - 1.0) / (lam * 6.0)));
    // unmasked rows carry no gradient
    for (double g : grad.row(1)) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("uniform model scores log K on average") {
    Rng rng(2);
    const std::size_t k = 16;
    const auto clean = random_grid(10, 4, k, rng);
    const UniformModel model(k);
    const auto probs = model.predict(clean, clean);
    double acc = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double lam = 1e-3 + (1.0 - 1e-3) * rng.uniform();
        acc += dce_loss(probs, clean, forward_corrupt(clean, lam, rng), lam).normalized;
    }
    CHECK(acc / n == doctest::Approx(std::log(16.0)).epsilon(0.03));
}

TEST_CASE("paired dataset follows its documented streams") {
    const auto books = random_books(2, 8, 4, 3);
    PairGenConfig gen;
    gen.frames = 12;
    const auto ds = generate_paired_dataset(gen, books, 5, 77);
    CHECK(ds.size() == 5);
    // each pair depends only on (seed, pair index)
    const auto small = generate_paired_dataset(gen, books, 2, 77);
    CHECK(small.clean[1] == ds.clean[1]);
    CHECK(small.noisy[1] == ds.noisy[1]);
    // replay pair 3: SNR uniform, AR(1) clean latents, then unit noise
    Rng rng(derive_seed(77, 3));
    const double snr = -5.0 + 20.0 * rng.uniform();
    CHECK(ds.snr_db[3] == snr);
    LatentSeq clean(12, 4);
    for (std::size_t h = 0; h < 4; ++h) {
        clean.values[h] = rng.normal();
    }
    for (std::size_t i = 1; i < 12; ++i) {
        for (std::size_t h = 0; h < 4; ++h) {
            clean.values[i * 4 + h] = 0.9 * clean.values[(i - 1) * 4 + h] + std::sqrt(1 - 0.81) * rng.normal();
        }
    }
    CHECK(rvq_encode(clean, books) == ds.clean[3]);
    std::vector<double> noise(48);
    double pc = 0.0;
    double pn = 0.0;
    for (std::size_t i = 0; i < 48; ++i) {
        noise[i] = rng.normal();
        pc += clean.values[i] * clean.values[i];
        pn += noise[i] * noise[i];
    }
    const double scale = std::sqrt(pc / (pn * std::pow(10.0, snr / 10.0)));
    LatentSeq noisy = clean;
    double pe = 0.0;
    for (std::size_t i = 0; i < 48; ++i) {
        noisy.values[i] += scale * noise[i];
        pe += scale * noise[i] * scale * noise[i];
    }
    CHECK(10.0 * std::log10(pc / pe) == doctest::Approx(snr).epsilon(1e-12));
    CHECK(rvq_encode(noisy, books) == ds.noisy[3]);
}

TEST_CASE("noisier pairs lose more tokens") {
    const auto books = random_books(2, 16, 4, 4);
    PairGenConfig gen;
    gen.frames = 50;
    double prev = -1.0;
    for (double snr : {-5.0, 5.0, 15.0, 40.0}) {
        gen.snr_override_db = snr;
        const auto ds = generate_paired_dataset(gen, books, 20, 1);
        double acc = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            acc += token_accuracy(ds.noisy[i], ds.clean[i]);
        }
        CHECK(acc > prev);
        prev = acc;
    }
}

TEST_CASE("dataset persistence: layout and validation") {
    const auto books = random_books(2, 300, 3, 5);
    PairGenConfig gen;
    gen.frames = 4;
    const auto ds = generate_paired_dataset(gen, books, 3, 9);
    const auto dir = std::filesystem::temp_directory_path() / "addse_test_dataset";
    std::filesystem::create_directories(dir);
    save_dataset(dir / "ds.json", ds);
    const auto back = load_dataset(dir / "ds.json");
    CHECK(back.clean == ds.clean);
    CHECK(back.noisy == ds.noisy);
    CHECK(back.snr_db == ds.snr_db);

    std::string bytes;
    {
        std::ifstream in(dir / "ds.codes", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    REQUIRE(bytes.size() == 3 * 2 * 4 * 2 * 2);
    auto code_at = [&](std::size_t i) {
        return static_cast<unsigned char>(bytes[2 * i]) | (static_cast<unsigned char>(bytes[2 * i + 1]) << 8);
    };
    // pair 1, noisy grid, frame 2, depth 1
    CHECK(code_at(1 * 16 + 8 + 2 * 2 + 1) == ds.noisy[1](2, 1));
    CHECK(code_at(5) == ds.clean[0](2, 1));

    {
        std::ofstream out(dir / "ds.codes", std::ios::binary);
        out << bytes.substr(0, bytes.size() - 2);
    }
    try {
        load_dataset(dir / "ds.json");
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::format);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("training a tabular model lowers DCE, deterministically") {
    const auto table = make_coupled_channel_table(1, 2, 3, 0.8, 0.8);
    PairedCodeDataset ds;
    ds.frames = 1;
    ds.depth = 2;
    ds.codebook_size = 3;
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        auto [c, x] = table.sample_pair(rng);
        ds.clean.push_back(c);
        ds.noisy.push_back(x);
        ds.snr_db.push_back(0.0);
    }
    DCEConfig cfg;
    cfg.steps = 300;
    cfg.batch_size = 8;
    auto run = [&] {
        TabularModel model(1, 2, 3);
        AdamWConfig ac;
        ac.lr = 0.05;
        AdamW opt(ac);
        Rng r(4);
        std::vector<double> losses;
        const auto m = train(model, ds, cfg, opt, r, [&](const StepMetrics& s) { losses.push_back(s.loss); });
        CHECK(m.steps == 300);
        CHECK(losses.size() == 300);
        return std::make_pair(std::vector<double>(model.params().values().begin(), model.params().values().end()),
                              eval_dce(model, ds, cfg, 8, 5));
    };
    const auto [params_a, dce_a] = run();
    const auto [params_b, dce_b] = run();
    CHECK(params_a == params_b);
    CHECK(dce_a == dce_b);
    const UniformModel uniform(3);
    CHECK(dce_a < 0.8 * eval_dce(uniform, ds, cfg, 8, 5));
}

TEST_CASE("NaN loss aborts with batch context") {
    PairedCodeDataset ds;
    ds.frames = 2;
    ds.depth = 1;
    ds.codebook_size = 2;
    for (int i = 0; i < 4; ++i) {
        ds.clean.emplace_back(2, 1, 2);
        ds.noisy.emplace_back(2, 1, 2);
        ds.snr_db.push_back(0.0);
    }
    NanModel model;
    DCEConfig cfg;
    cfg.lambda_min = 0.999;  // every position masked in practice
    AdamW opt;
    Rng rng(1);
    try {
        train_epoch(model, ds, cfg, opt, rng);
        FAIL("expected training error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::training);
        CHECK(std::string(e.what()).find("batch 0") != std::string::npos);
        CHECK(std::string(e.what()).find("lambdas") != std::string::npos);
    }
}

TEST_CASE("metrics CSV columns") {
    std::ostringstream out;
    write_metrics_header(out);
    StepMetrics m;
    m.step = 3;
    m.loss = 1.5;
    m.decile_loss.fill(std::numeric_limits<double>::quiet_NaN());
    m.decile_loss[4] = 2.0;
    write_metrics_row(out, m);
    const auto text = out.str();
    CHECK(text.rfind("step,loss,lr,grad_norm,lambda_decile_0,", 0) == 0);
    CHECK(text.find("lambda_decile_9\n") != std::string::npos);
    CHECK(text.find("\n3,1.5,0,0,,,,,2,,,,,\n") != std::string::npos);
}
