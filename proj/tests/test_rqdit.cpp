// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "addse/error.hpp"
#include "addse/rng.hpp"
#include "addse/rqdit.hpp"
#include "addse/training.hpp"
#include "addse/verify.hpp"

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

CodeGrid random_grid(std::size_t l, std::size_t d, std::size_t k, Rng& rng) {
    CodeGrid g(l, d, k);
    for (std::size_t p = 0; p < g.size(); ++p) {
        g[p] = static_cast<Code>(rng.below(k));
    }
    return g;
}

MaskedGrid mask_some(CodeGrid g, double prob, Rng& rng) {
    for (std::size_t p = 0; p < g.size(); ++p) {
        if (rng.uniform() < prob) {
            g[p] = g.mask();
        }
    }
    return g;
}

RQDiTConfig small_config(std::size_t k = 6, std::size_t d = 2, std::size_t h = 4) {
    RQDiTConfig cfg;
    cfg.hidden_dim = 8;
    cfg.n_heads = 2;
    cfg.codebook_size = k;
    cfg.depth = d;
    cfg.latent_dim = h;
    return cfg;
}

void perturb(RQDiT& m, std::uint64_t seed) {
    Rng rng(seed);
    for (double& v : m.params().values()) {
        v += 0.3 * rng.normal();
    }
}

}  // namespace

TEST_CASE("predict returns an L x D x K probability array") {
    RQDiT m(small_config(), random_books(2, 6, 4, 1), 2);
    Rng rng(3);
    const auto clean = random_grid(5, 2, 6, rng);
    const auto probs = m.predict(mask_some(clean, 0.5, rng), random_grid(5, 2, 6, rng));
    CHECK(probs.frames == 5);
    CHECK(probs.depth == 2);
    CHECK(probs.codebook_size == 6);
    CHECK_NOTHROW(probs.validate(1e-12));
}

TEST_CASE("construction is deterministic in the seed") {
    RQDiT a(small_config(), random_books(2, 6, 4, 1), 7);
    RQDiT b(small_config(), random_books(2, 6, 4, 1), 7);
    RQDiT c(small_config(), random_books(2, 6, 4, 1), 8);
    CHECK(std::equal(a.params().values().begin(), a.params().values().end(), b.params().values().begin()));
    CHECK_FALSE(std::equal(a.params().values().begin(), a.params().values().end(), c.params().values().begin()));
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.hidden_dim = 6;
    cfg.n_heads = 2;  // head dim 3 is odd, RoPE needs pairs
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config();
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), Error);
    // codebook shape must match
    CHECK_THROWS_AS(RQDiT(small_config(6, 2, 4), random_books(2, 5, 4, 1), 1), Error);
}

TEST_CASE("model rejects grids with a different K") {
    RQDiT m(small_config(), random_books(2, 6, 4, 1), 2);
    CodeGrid wrong(3, 2, 5);
    CHECK_THROWS_AS(m.predict(wrong, wrong), Error);
}

TEST_CASE("rope: position 0 is the identity, position p rotates pairs") {
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    auto w = v;
    rope_apply(w, 0.0);
    CHECK(w == v);
    std::vector<double> u = {1.0, 0.0, 1.0, 0.0};
    rope_apply(u, 1.0, 10000.0);
    // pair 0 frequency 1, pair 1 frequency 10000^-0.5
    CHECK(u[0] == doctest::Approx(std::cos(1.0)).epsilon(1e-14));
    CHECK(u[1] == doctest::Approx(std::sin(1.0)).epsilon(1e-14));
    CHECK(u[2] == doctest::Approx(std::cos(0.01)).epsilon(1e-14));
    CHECK(u[3] == doctest::Approx(std::sin(0.01)).epsilon(1e-14));
    std::vector<double> odd(3, 1.0);
    CHECK_THROWS_AS(rope_apply(odd, 1.0), Error);
}

TEST_CASE("embedding maps masks to zero and codes to their entries") {
    const auto books = random_books(2, 3, 4, 5);
    CodeGrid g(2, 2, 3);
    g(0, 0) = 2;
    g(0, 1) = g.mask();
    g(1, 0) = 0;
    g(1, 1) = 1;
    const auto e = embed_codes(g, books);
    REQUIRE(e.size() == 2 * 2 * 4);
    for (std::size_t h = 0; h < 4; ++h) {
        CHECK(e[h] == books.entry(0, 2)[h]);
        CHECK(e[4 + h] == 0.0);
        CHECK(e[8 + h] == books.entry(0, 0)[h]);
        CHECK(e[12 + h] == books.entry(1, 1)[h]);
    }
}

TEST_CASE("batched forward equals per-example forward") {
    RQDiT m(small_config(), random_books(2, 6, 4, 1), 2);
    perturb(m, 11);
    Rng rng(4);
    std::vector<MaskedGrid> masked;
    std::vector<CodeGrid> noisy;
    for (int b = 0; b < 3; ++b) {
        masked.push_back(mask_some(random_grid(4, 2, 6, rng), 0.5, rng));
        noisy.push_back(random_grid(4, 2, 6, rng));
    }
    const auto batch = m.forward_logits_batch(masked, noisy);
    REQUIRE(batch.frames == 12);
    for (int b = 0; b < 3; ++b) {
        const auto single = m.forward_logits(masked[b], noisy[b]);
        for (std::size_t i = 0; i < single.values.size(); ++i) {
            CHECK(batch.values[b * single.values.size() + i] == doctest::Approx(single.values[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("batched backward accumulates the per-example gradients") {
    RQDiT m(small_config(), random_books(2, 6, 4, 1), 2);
    perturb(m, 12);
    Rng rng(9);
    std::vector<CodeGrid> clean;
    std::vector<MaskedGrid> masked;
    std::vector<CodeGrid> noisy;
    for (int b = 0; b < 2; ++b) {
        clean.push_back(random_grid(3, 2, 6, rng));
        masked.push_back(mask_some(clean.back(), 0.6, rng));
        noisy.push_back(random_grid(3, 2, 6, rng));
    }
    m.params().zero_grad();
    for (int b = 0; b < 2; ++b) {
        ConditionalProbs d;
        dce_loss_from_logits(m.forward_logits(masked[b], noisy[b]), clean[b], masked[b], 0.4, &d);
        m.backward(d);
    }
    const std::vector<double> expected(m.params().grads().begin(), m.params().grads().end());

    m.params().zero_grad();
    const auto logits = m.forward_logits_batch(masked, noisy);
    ConditionalProbs dall(6, 2, 6);
    const std::size_t n = 3 * 2 * 6;
    for (int b = 0; b < 2; ++b) {
        ConditionalProbs part(3, 2, 6);
        std::copy_n(logits.values.begin() + b * n, n, part.values.begin());
        ConditionalProbs d;
        dce_loss_from_logits(part, clean[b], masked[b], 0.4, &d);
        std::copy(d.values.begin(), d.values.end(), dall.values.begin() + b * n);
    }
    m.backward_batch(dall);
    const auto got = m.params().grads();
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        worst = std::max(worst, std::abs(got[i] - expected[i]));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("backward without a forward is a usage error") {
    RQDiT m(small_config(), random_books(2, 6, 4, 1), 2);
    ConditionalProbs d(3, 2, 6);
    try {
        m.backward(d);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::usage);
    }
}

TEST_CASE("gradients agree with central differences for several seeds") {
    for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
        verify::Options o;
        o.seed = seed;
        const auto report = verify::run_suite("gradient-check", o);
        CAPTURE(seed);
        for (const auto& c : report.checks) {
            CAPTURE(c.name);
            CAPTURE(c.value);
            CHECK(c.passed);
        }
        CHECK(report.checks.size() > 10);
    }
}

TEST_CASE("structural properties hold") {
    verify::Options o;
    o.seed = 5;
    const auto report = verify::run_suite("rqdit-structure", o);
    for (const auto& c : report.checks) {
        CAPTURE(c.name);
        CAPTURE(c.value);
        CHECK(c.passed);
    }
}

TEST_CASE("overfits a 32-pair fixture") {
    const auto books = random_books(2, 8, 4, 21);
    PairGenConfig gen;
    gen.frames = 6;
    gen.snr_override_db = 5.0;
    const auto data = generate_paired_dataset(gen, books, 32, 22);
    RQDiTConfig cfg = small_config(8, 2, 4);
    cfg.hidden_dim = 32;
    RQDiT m(cfg, books, 23);
    DCEConfig dce;
    dce.batch_size = 8;
    dce.steps = 3000;
    dce.lr = 3e-3;
    dce.lambda_min = 0.05;
    AdamW opt({.lr = dce.lr, .clip_norm = 1.0});
    Rng rng(24);
    const double before = eval_dce(m, data, dce, 8, 25);
    train(m, data, dce, opt, rng);
    const double after = eval_dce(m, data, dce, 8, 25);
    CAPTURE(before);
    CHECK(after < 0.05);
}
