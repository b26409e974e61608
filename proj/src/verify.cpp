// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "addse/checkpoint.hpp"
#include "addse/cli.hpp"
#include "addse/codec.hpp"
#include "addse/diffusion.hpp"
#include "addse/joint_table.hpp"
#include "addse/rqdit.hpp"
#include "addse/sampler.hpp"
#include "addse/tabular.hpp"
#include "addse/training.hpp"
#include "addse/wav.hpp"

namespace addse::verify {
namespace {

Check make_check(std::string name, double value, const std::string& relation, double threshold,
                 std::string detail = {}) {
    bool ok = false;
    if (relation == "<") {
        ok = value < threshold;
    } else if (relation == "<=") {
        ok = value <= threshold;
    } else if (relation == ">") {
        ok = value > threshold;
    } else if (relation == ">=") {
        ok = value >= threshold;
    } else {
        ok = value == threshold;
    }
    return {std::move(name), ok, value, threshold, relation, std::move(detail)};
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

void say(const Options& o, const std::string& msg) {
    if (o.log) {
        o.log(msg);
    }
}

CodebookSet random_books(std::size_t depth, std::size_t k, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> entries(depth * k * dim);
    for (double& v : entries) {
        v = rng.normal();
    }
    return CodebookSet(depth, k, dim, std::move(entries));
}

CodeGrid random_grid(std::size_t frames, std::size_t depth, std::size_t k, Rng& rng) {
    CodeGrid g(frames, depth, k);
    for (std::size_t p = 0; p < g.size(); ++p) {
        g[p] = static_cast<Code>(rng.below(k));
    }
    return g;
}

// Rows favour the noisy code and the nearest unmasked code along the frame
// axis, so predictions change as the grid fills in.
class NeighbourModel final : public ConditionalModel {
public:
    explicit NeighbourModel(std::size_t k) : k_(k) {}

    ConditionalProbs predict(const MaskedGrid& masked, const CodeGrid& noisy) const override {
        check_inputs(masked, noisy);
        ConditionalProbs out(masked.frames(), masked.depth(), k_, 1.0);
        for (std::size_t i = 0; i < masked.frames(); ++i) {
            for (std::size_t j = 0; j < masked.depth(); ++j) {
                auto row = out.row(i * masked.depth() + j);
                row[static_cast<std::size_t>(noisy(i, j))] += 3.0;
                for (std::size_t off = 1; off < masked.frames(); ++off) {
                    const Code before = i >= off ? masked(i - off, j) : masked.mask();
                    const Code after = i + off < masked.frames() ? masked(i + off, j) : masked.mask();
                    const Code near = before != masked.mask() ? before : after;
                    if (near != masked.mask()) {
                        row[static_cast<std::size_t>(near)] += 2.0;
                        break;
                    }
                }
                double total = 0.0;
                for (double v : row) {
                    total += v;
                }
                for (double& v : row) {
                    v /= total;
                }
            }
        }
        return out;
    }
    std::size_t codebook_size() const override { return k_; }
    std::string name() const override { return "neighbour"; }

private:
    std::size_t k_;
};

std::vector<double> sample_histogram(const ConditionalModel& model, const CodeGrid& noisy, std::size_t n_steps,
                                     std::size_t draws, std::uint64_t seed) {
    const std::size_t k = model.codebook_size();
    std::vector<double> hist(checked_power(k, noisy.size(), std::uint64_t{1} << 24), 0.0);
    SamplerConfig cfg;
    cfg.n_steps = n_steps;
    for (std::size_t d = 0; d < draws; ++d) {
        cfg.seed = derive_seed(seed, d);
        hist[grid_index(sample(model, noisy, cfg).first, k)] += 1.0;
    }
    for (double& h : hist) {
        h /= static_cast<double>(draws);
    }
    return hist;
}

JointTable load_fixture(const Options& o) { return load_joint_table(o.fixture_dir / "joint_table_l2d2k3.json"); }

CodeGrid most_likely_noisy(const JointTable& table) {
    std::uint64_t best = 0;
    double best_mass = -1.0;
    for (std::uint64_t n = 0; n < table.grid_count(); ++n) {
        double m = 0.0;
        for (std::uint64_t c = 0; c < table.grid_count(); ++c) {
            m += table.mass(c, n);
        }
        if (m > best_mass) {
            best_mass = m;
            best = n;
        }
    }
    return table.grid(best);
}

void suite_forward_marginal(const Options& o, SuiteReport& r) {
    Rng rng(derive_seed(o.seed, 1));
    const NoiseSchedule sched;
    double worst = 0.0;
    double worst_col = 0.0;
    for (std::size_t k : {2u, 4u, 8u}) {
        const Matrix q = absorbing_rate_matrix(k);
        for (std::size_t c = 0; c <= k; ++c) {
            worst_col = std::max(worst_col, std::abs(q.column_sum(c)));
        }
        for (int trial = 0; trial < 20; ++trial) {
            Distribution p0;
            p0.probs.resize(k + 1);
            double total = 0.0;
            for (double& v : p0.probs) {
                v = rng.uniform();
                total += v;
            }
            for (double& v : p0.probs) {
                v /= total;
            }
            const double t = rng.uniform();
            const auto closed = absorbing_marginal(p0, sched, t);
            const auto oracle = solve_forward_exact(p0, sched, t);
            for (std::size_t s = 0; s <= k; ++s) {
                worst = std::max(worst, std::abs(closed.probs[s] - oracle.probs[s]));
            }
        }
    }
    r.checks.push_back(make_check("closed form vs RK4 oracle, K in {2,4,8}, 20 draws each", worst, "<=", 1e-8));
    r.checks.push_back(make_check("absorbing rate matrix column sums", worst_col, "<=", 1e-12));

    const double lam = 0.3;
    CodeGrid codes = random_grid(100, 10, 8, rng);
    std::size_t masked = 0;
    const std::size_t trials = 100;
    for (std::size_t t = 0; t < trials; ++t) {
        masked += forward_corrupt(codes, lam, rng).mask_count();
    }
    const double n = static_cast<double>(trials * codes.size());
    const double z = std::abs(static_cast<double>(masked) / n - lam) / std::sqrt(lam * (1.0 - lam) / n);
    r.checks.push_back(make_check("forward_corrupt mask fraction |z| over 1e5 positions", z, "<=", 4.0));
}

void suite_posterior_equivalence(const Options& o, SuiteReport& r) {
    const JointTable table = load_fixture(o);
    const JointTable generated = reference_joint_table();
    double drift = 0.0;
    for (std::size_t i = 0; i < table.probs().size(); ++i) {
        drift = std::max(drift, std::abs(table.probs()[i] - generated.probs()[i]));
    }
    r.checks.push_back(make_check("fixture matches its generator", drift, "<=", 1e-15));

    const std::size_t k = table.codebook_size();
    const std::size_t n_pos = table.positions();
    const std::uint64_t masked_count = checked_power(k + 1, n_pos, JointTable::kCapacity);
    double worst = 0.0;
    std::size_t configs = 0;
    for (std::uint64_t n = table.grid_count(); n-- > 0;) {
        const CodeGrid noisy = table.grid(n);
        for (std::uint64_t m = 0; m < masked_count; ++m) {
            const MaskedGrid masked = grid_from_index(m, table.frames(), table.depth(), k, k + 1);
            // Independent enumeration: clean grids in descending index order,
            // marginals accumulated per position.
            std::vector<double> acc(n_pos * k, 0.0);
            double total = 0.0;
            for (std::uint64_t c = table.grid_count(); c-- > 0;) {
                const CodeGrid clean = table.grid(c);
                bool agrees = true;
                for (std::size_t p = 0; p < n_pos && agrees; ++p) {
                    agrees = masked.is_masked(p) || masked[p] == clean[p];
                }
                if (!agrees) {
                    continue;
                }
                const double w = table.mass(c, n);
                total += w;
                for (std::size_t p = 0; p < n_pos; ++p) {
                    acc[p * k + static_cast<std::size_t>(clean[p])] += w;
                }
            }
            const auto rows = exact_posterior(table, masked, noisy);
            for (std::size_t p = 0; p < n_pos; ++p) {
                if (!masked.is_masked(p)) {
                    continue;
                }
                for (std::size_t v = 0; v < k; ++v) {
                    const double expect = total > 0.0 ? acc[p * k + v] / total : 1.0 / static_cast<double>(k);
                    worst = std::max(worst, std::abs(rows.row(p)[v] - expect));
                }
            }
            ++configs;
        }
    }
    r.checks.push_back(make_check("exact_posterior vs reverse-order enumeration over " + std::to_string(configs) +
                                      " configurations",
                                  worst, "<=", 1e-12));
}

void suite_sampler_tv(const Options& o, SuiteReport& r) {
    const JointTable table = load_fixture(o);
    const ExactOracleModel model(table);
    const CodeGrid noisy = most_likely_noisy(table);
    const auto truth = table.clean_given_noisy(noisy);
    const std::size_t draws = 200000;
    std::vector<double> tv;
    std::string detail;
    const std::vector<std::size_t> grid = {1, 4, 16, 64, 256};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto hist = sample_histogram(model, noisy, grid[i], draws, derive_seed(o.seed, 100 + i));
        tv.push_back(total_variation(hist, truth));
        detail += "n_steps=" + std::to_string(grid[i]) + ": " + fmt(tv.back()) + "; ";
        say(o, "sampler-TV n_steps=" + std::to_string(grid[i]) + " TV=" + fmt(tv.back()));
    }
    r.checks.push_back(make_check("TV at n_steps=256 over 2e5 samples", tv.back(), "<", 0.02, detail));
    double rise = -1.0;
    for (std::size_t i = 1; i < tv.size(); ++i) {
        rise = std::max(rise, tv[i] - tv[i - 1]);
    }
    r.checks.push_back(make_check("TV non-increasing in n_steps (largest rise)", rise, "<=", 0.01, detail));
}

void suite_one_step(const Options& o, SuiteReport& r) {
    const JointTable table = load_fixture(o);
    const ExactOracleModel model(table);
    const CodeGrid noisy = most_likely_noisy(table);
    const auto expect = expected_distribution_one_step(model, noisy);
    const auto hist = sample_histogram(model, noisy, 1, 200000, derive_seed(o.seed, 200));
    r.checks.push_back(make_check("one-step histogram vs product law, TV over 2e5 samples",
                                  total_variation(hist, expect), "<", 0.01));
}

void suite_dce(const Options& o, SuiteReport& r) {
    Rng rng(derive_seed(o.seed, 300));
    const std::size_t k = 64;
    const double lambda_min = 1e-3;
    const CodeGrid clean = random_grid(20, 4, k, rng);
    const UniformModel uniform(k);
    const auto probs = uniform.predict(MaskedGrid::fully_masked(20, 4, k), clean);
    double acc = 0.0;
    const std::size_t draws = 100000;
    for (std::size_t d = 0; d < draws; ++d) {
        const double lam = lambda_min + (1.0 - lambda_min) * rng.uniform();
        acc += dce_loss(probs, clean, forward_corrupt(clean, lam, rng), lam).normalized;
    }
    const double log_k = std::log(static_cast<double>(k));
    const double rel = std::abs(acc / static_cast<double>(draws) / log_k - 1.0);
    r.checks.push_back(make_check("uniform-model DCE / log K - 1 over 1e5 draws", rel, "<", 0.02,
                                  "mean " + fmt(acc / static_cast<double>(draws)) + ", log K " + fmt(log_k)));

    const JointTable table = load_fixture(o);
    TabularModel tab(table.frames(), table.depth(), table.codebook_size());
    TabularTrainOptions opts;
    opts.seed = derive_seed(o.seed, 301);
    tabular_train(tab, table, opts);
    const auto gap = posterior_gap(tab, table);
    r.checks.push_back(make_check("tabular (exact expectations) vs enumerated posterior, max per-row KL", gap.max_kl,
                                  "<", 1e-3,
                                  std::to_string(gap.rows) + " rows, mean KL " + fmt(gap.mean_kl)));
}

void suite_nfe(const Options& o, SuiteReport& r) {
    Rng rng(derive_seed(o.seed, 400));
    const std::size_t frames = 200;
    const std::size_t depth = 4;
    const std::size_t k = 16;
    const std::size_t bound = frames * depth + 1;
    const CodeGrid noisy = random_grid(frames, depth, k, rng);
    const UniformModel uniform(k);
    double worst_excess = -1e300;
    std::size_t strict_fail = 0;
    double mean_nfe_1024 = 0.0;
    std::string detail;
    for (std::size_t n = 1; n <= 1024; n *= 2) {
        const std::size_t seeds = n == 1024 ? 100 : 10;
        double mean = 0.0;
        for (std::size_t s = 0; s < seeds; ++s) {
            SamplerConfig cfg;
            cfg.n_steps = n;
            cfg.seed = derive_seed(o.seed, n * 1000 + s);
            const auto trace = sample(uniform, noisy, cfg).second;
            worst_excess = std::max(worst_excess, static_cast<double>(trace.nfe) -
                                                      static_cast<double>(std::min(n, bound)));
            mean += static_cast<double>(trace.nfe);
            if (n == 1024 && trace.nfe >= n) {
                ++strict_fail;
            }
        }
        mean /= static_cast<double>(seeds);
        if (n == 1024) {
            mean_nfe_1024 = mean;
        }
        detail += std::to_string(n) + ":" + fmt(mean) + " ";
    }
    r.checks.push_back(make_check("max NFE - min(n_steps, L*D+1) over n_steps 1..1024", worst_excess, "<=", 0.0,
                                  "mean NFE by n_steps " + detail));
    r.checks.push_back(make_check("runs with NFE >= n_steps at n_steps=1024 (100 seeds)",
                                  static_cast<double>(strict_fail), "==", 0.0,
                                  "mean NFE " + fmt(mean_nfe_1024)));

    const NeighbourModel neighbour(k);
    std::size_t mismatches = 0;
    for (std::size_t n : {4u, 64u, 1024u}) {
        for (std::size_t s = 0; s < 3; ++s) {
            SamplerConfig cfg;
            cfg.n_steps = n;
            cfg.seed = derive_seed(o.seed, 5000 + n * 10 + s);
            const auto cached = sample(neighbour, noisy, cfg);
            cfg.reuse_predictions = false;
            const auto fresh = sample(neighbour, noisy, cfg);
            bool same = cached.first == fresh.first;
            for (std::size_t i = 0; i < n && same; ++i) {
                same = cached.second.steps[i].unmask_count == fresh.second.steps[i].unmask_count;
            }
            mismatches += same ? 0 : 1;
        }
    }
    r.checks.push_back(make_check("caching on/off output mismatches (grid-dependent model)",
                                  static_cast<double>(mismatches), "==", 0.0));
}

void suite_gradient_check(const Options& o, SuiteReport& r) {
    std::optional<RQDiT> model;
    std::size_t frames = 3;
    if (o.checkpoint) {
        const auto cfg = read_checkpoint_config(*o.checkpoint);
        CodebookSet books = o.codebooks ? load_codebooks(*o.codebooks)
                                        : random_books(cfg.depth, cfg.codebook_size, cfg.latent_dim,
                                                       derive_seed(o.seed, 600));
        model.emplace(load_checkpoint(*o.checkpoint, std::move(books)));
    } else {
        RQDiTConfig cfg;
        cfg.hidden_dim = 8;
        cfg.codebook_size = 4;
        cfg.depth = 2;
        cfg.latent_dim = 4;
        model.emplace(cfg, random_books(2, 4, 4, derive_seed(o.seed, 601)), derive_seed(o.seed, 602));
        // Move every parameter off its initial value so gates and the head
        // carry gradient.
        Rng rng(derive_seed(o.seed, 603));
        for (double& v : model->params().values()) {
            v += 0.5 * rng.normal();
        }
    }
    RQDiT& m = *model;
    const std::size_t k = m.config().codebook_size;
    Rng rng(derive_seed(o.seed, 604));
    const CodeGrid clean = random_grid(frames, m.config().depth, k, rng);
    const CodeGrid noisy = random_grid(frames, m.config().depth, k, rng);
    MaskedGrid masked = clean;
    for (std::size_t p = 0; p < masked.size(); ++p) {
        if (p % 2 == 0 || rng.uniform() < 0.3) {
            masked[p] = masked.mask();
        }
    }
    const double lam = 0.5;
    auto loss = [&] { return dce_loss(m.predict(masked, noisy), clean, masked, lam).normalized; };

    m.params().zero_grad();
    ConditionalProbs dlogits;
    dce_loss_from_logits(m.forward_logits(masked, noisy), clean, masked, lam, &dlogits);
    m.backward(dlogits);

    // Five-point central stencil. The three-point one at h = 1e-4 leaves an
    // O(h^2) truncation error of ~3e-4 relative on strongly curved entries
    // (LayerNorm over near-constant activations).
    const double h = 1e-5;
    const double abs_floor = 1e-9;
    auto values = m.params().values();
    const auto grads = m.params().grads();
    for (const auto& t : m.params().tensors()) {
        double worst = 0.0;
        for (std::size_t i = t.offset; i < t.offset + t.size; ++i) {
            const double orig = values[i];
            auto at = [&](double delta) {
                values[i] = orig + delta;
                return loss();
            };
            const double fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            values[i] = orig;
            const double err = std::abs(fd - grads[i]);
            if (!std::isfinite(err)) {
                worst = std::numeric_limits<double>::infinity();
                continue;
            }
            if (err <= abs_floor) {
                continue;
            }
            worst = std::max(worst, err / std::max(std::abs(fd), std::abs(grads[i])));
        }
        r.checks.push_back(make_check(t.name, worst, "<", 1e-4, "max relative error, five-point central stencil, h = 1e-5"));
    }
}

void suite_rqdit_structure(const Options& o, SuiteReport& r) {
    const std::size_t k = 8;
    const std::size_t depth = 3;
    const std::size_t dim = 6;
    const std::size_t frames = 5;
    RQDiTConfig cfg;
    cfg.hidden_dim = 16;
    cfg.n_heads = 2;
    cfg.codebook_size = k;
    cfg.depth = depth;
    cfg.latent_dim = dim;
    const CodebookSet books = random_books(depth, k, dim, derive_seed(o.seed, 700));
    RQDiT fresh(cfg, books, derive_seed(o.seed, 701));
    Rng rng(derive_seed(o.seed, 702));

    std::vector<double> x(frames * depth * cfg.hidden_dim);
    std::vector<double> c(x.size());
    for (double& v : x) {
        v = rng.normal();
    }
    for (double& v : c) {
        v = rng.normal();
    }
    double identity = 0.0;
    for (auto stack : {RQDiT::Stack::frame, RQDiT::Stack::depth}) {
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const auto y = fresh.apply_stack(stack, x, c, frames * depth, depth, l);
            for (std::size_t i = 0; i < x.size(); ++i) {
                identity = std::max(identity, std::abs(y[i] - x[i]));
            }
        }
    }
    r.checks.push_back(make_check("adaLN-zero block identity at init, max |out - in|", identity, "<=", 1e-12));

    RQDiT model(cfg, books, derive_seed(o.seed, 703));
    for (double& v : model.params().values()) {
        v += 0.3 * rng.normal();
    }
    const CodeGrid clean = random_grid(frames, depth, k, rng);
    const CodeGrid noisy = random_grid(frames, depth, k, rng);
    MaskedGrid masked = clean;
    for (std::size_t p = 0; p < masked.size(); p += 2) {
        masked[p] = masked.mask();
    }
    std::vector<double> explicit_embed(masked.size() * dim, 0.0);
    std::vector<double> noisy_embed(masked.size() * dim, 0.0);
    for (std::size_t i = 0; i < frames; ++i) {
        for (std::size_t j = 0; j < depth; ++j) {
            const std::size_t p = i * depth + j;
            const auto n = books.entry(j, static_cast<std::size_t>(noisy(i, j)));
            std::copy(n.begin(), n.end(), noisy_embed.begin() + static_cast<std::ptrdiff_t>(p * dim));
            if (!masked.is_masked(p)) {
                const auto e = books.entry(j, static_cast<std::size_t>(masked(i, j)));
                std::copy(e.begin(), e.end(), explicit_embed.begin() + static_cast<std::ptrdiff_t>(p * dim));
            }
        }
    }
    const auto direct = model.forward_logits(masked, noisy);
    const auto zeros = model.logits_from_embeddings(explicit_embed, noisy_embed, frames);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < direct.values.size(); ++i) {
        differ += direct.values[i] == zeros.values[i] ? 0 : 1;
    }
    r.checks.push_back(make_check("mask embedding vs explicit zeros, differing logits (bitwise)",
                                  static_cast<double>(differ), "==", 0.0));

    std::vector<double> frozen(frames * cfg.hidden_dim);
    for (double& v : frozen) {
        v = rng.normal();
    }
    model.set_hooks({false, frozen});
    const std::size_t probe = 2;
    MaskedGrid changed = masked;
    changed(probe, 0) = changed(probe, 0) == changed.mask() ? 1 : changed.mask();
    const auto before = model.predict(masked, noisy);
    const auto after = model.predict(changed, noisy);
    std::size_t leaks = 0;
    double moved = 0.0;
    for (std::size_t p = 0; p < before.positions(); ++p) {
        for (std::size_t v = 0; v < k; ++v) {
            const double d = std::abs(before.row(p)[v] - after.row(p)[v]);
            if (p / depth == probe) {
                moved = std::max(moved, d);
            } else if (d != 0.0) {
                ++leaks;
            }
        }
    }
    r.checks.push_back(make_check("frame independence under frozen frame-DiT output, changed entries off frame",
                                  static_cast<double>(leaks), "==", 0.0));
    r.checks.push_back(make_check("probe frame responds to its own change", moved, ">", 0.0));
    model.set_hooks({});

    double shift = 0.0;
    double norm = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> q(8);
        std::vector<double> kk(8);
        for (double& v : q) {
            v = rng.normal();
        }
        for (double& v : kk) {
            v = rng.normal();
        }
        const double m = std::floor(rng.uniform() * 200.0);
        const double n = std::floor(rng.uniform() * 200.0);
        const double delta = std::floor(rng.uniform() * 200.0);
        auto rotated_dot = [&](double a, double b) {
            auto qa = q;
            auto kb = kk;
            rope_apply(qa, a);
            rope_apply(kb, b);
            double dot = 0.0;
            for (std::size_t i = 0; i < qa.size(); ++i) {
                dot += qa[i] * kb[i];
            }
            return dot;
        };
        shift = std::max(shift, std::abs(rotated_dot(m, n) - rotated_dot(m + delta, n + delta)));
        auto qm = q;
        rope_apply(qm, m);
        double n0 = 0.0;
        double n1 = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            n0 += q[i] * q[i];
            n1 += qm[i] * qm[i];
        }
        norm = std::max(norm, std::abs(std::sqrt(n0) - std::sqrt(n1)));
    }
    r.checks.push_back(make_check("RoPE relative-position invariance, max dot difference", shift, "<=", 1e-8));
    r.checks.push_back(make_check("RoPE norm preservation", norm, "<=", 1e-10));

    // Frame permutation: equivariant without RoPE, not with it.
    std::vector<std::size_t> perm(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        perm[i] = (i + 2) % frames;
    }
    auto permuted = [&](const CodeGrid& g) {
        CodeGrid out = g;
        for (std::size_t i = 0; i < frames; ++i) {
            for (std::size_t j = 0; j < depth; ++j) {
                out(i, j) = g(perm[i], j);
            }
        }
        return out;
    };
    auto equivariance_gap = [&] {
        const auto base = model.frame_output(masked, noisy);
        const auto moved_out = model.frame_output(permuted(masked), permuted(noisy));
        double gap = 0.0;
        for (std::size_t i = 0; i < frames; ++i) {
            for (std::size_t h = 0; h < cfg.hidden_dim; ++h) {
                gap = std::max(gap, std::abs(moved_out[i * cfg.hidden_dim + h] - base[perm[i] * cfg.hidden_dim + h]));
            }
        }
        return gap;
    };
    const double with_rope = equivariance_gap();
    model.set_hooks({true, std::nullopt});
    const double without_rope = equivariance_gap();
    model.set_hooks({});
    r.checks.push_back(make_check("frame permutation equivariance without RoPE", without_rope, "<=", 1e-10));
    r.checks.push_back(make_check("frame permutation breaks equivariance with RoPE", with_rope, ">", 1e-6));

    const auto probs = model.predict(masked, noisy);
    double worst_sum = 0.0;
    for (std::size_t p = 0; p < probs.positions(); ++p) {
        double s = 0.0;
        for (double v : probs.row(p)) {
            s += v;
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    r.checks.push_back(make_check("output rows sum to 1", worst_sum, "<=", 1e-6));

    RQDiT bias_only(cfg, books, derive_seed(o.seed, 704));
    bias_only.zero_all_but_output_bias();
    auto b = bias_only.params().value(bias_only.params().find("head.1.bias"));
    for (double& v : b) {
        v = rng.normal();
    }
    std::vector<double> expect(b.begin(), b.end());
    const double top = *std::max_element(expect.begin(), expect.end());
    double z = 0.0;
    for (double& v : expect) {
        v = std::exp(v - top);
        z += v;
    }
    const auto rows = bias_only.predict(masked, noisy);
    double worst_bias = 0.0;
    for (std::size_t p = 0; p < rows.positions(); ++p) {
        for (std::size_t v = 0; v < k; ++v) {
            worst_bias = std::max(worst_bias, std::abs(rows.row(p)[v] - expect[v] / z));
        }
    }
    r.checks.push_back(make_check("only output bias nonzero: rows equal softmax(bias)", worst_bias, "<=", 1e-12));
}

void suite_rvq(const Options& o, SuiteReport& r) {
    const std::size_t dim = 8;
    const auto train = generate_clean_latents(40, 50, dim, 0.9, derive_seed(o.seed, 800));
    CodebookTrainingOptions opts;
    opts.depth = 4;
    opts.codebook_size = 16;
    opts.iterations = 30;
    opts.seed = derive_seed(o.seed, 801);
    const CodebookSet books = train_codebooks(train, opts);

    Rng rng(derive_seed(o.seed, 802));
    LatentSeq latents(1000, dim);
    for (double& v : latents.values) {
        v = rng.normal();
    }
    LatentSeq residual;
    const CodeGrid codes = rvq_encode(latents, books, &residual);
    const LatentSeq decoded = rvq_decode(codes, books);
    const CodeGrid again = rvq_encode(decoded, books);
    // A frame whose codes change must do so at a stage where the re-encoded
    // residual is strictly nearer the new entry; otherwise the encoder is at
    // fault rather than the quantizer geometry.
    std::size_t changed = 0;
    std::size_t unexplained = 0;
    double smallest_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < latents.frames; ++i) {
        std::vector<double> res(decoded.frame(i).begin(), decoded.frame(i).end());
        for (std::size_t j = 0; j < books.depth(); ++j) {
            const auto a = books.entry(j, static_cast<std::size_t>(codes(i, j)));
            const auto b = books.entry(j, static_cast<std::size_t>(again(i, j)));
            if (codes(i, j) != again(i, j)) {
                double da = 0.0;
                double db = 0.0;
                for (std::size_t h = 0; h < dim; ++h) {
                    da += (res[h] - a[h]) * (res[h] - a[h]);
                    db += (res[h] - b[h]) * (res[h] - b[h]);
                }
                ++changed;
                unexplained += db < da ? 0 : 1;
                smallest_gap = std::min(smallest_gap, da - db);
                break;
            }
            for (std::size_t h = 0; h < dim; ++h) {
                res[h] -= a[h];
            }
        }
    }
    r.checks.push_back(make_check("frames with encode(decode(codes)) != codes, 1000 latents",
                                  static_cast<double>(changed), "==", 0.0,
                                  "smallest distance gap at the first changed stage " + fmt(smallest_gap)));
    r.checks.push_back(make_check("changed frames not explained by a strict nearer entry",
                                  static_cast<double>(unexplained), "==", 0.0));
    double tele = 0.0;
    for (std::size_t i = 0; i < latents.values.size(); ++i) {
        tele = std::max(tele, std::abs(latents.values[i] - decoded.values[i] - residual.values[i]));
    }
    r.checks.push_back(make_check("residual telescoping, max |h - decode - r_D|", tele, "<=", 1e-10));

    double rise = -1e300;
    double previous = std::numeric_limits<double>::infinity();
    std::string detail;
    for (std::size_t d = 1; d <= books.depth(); ++d) {
        const auto sub = books.truncated(d);
        const double mse = mean_squared_error(latents, rvq_decode(rvq_encode(latents, sub), sub));
        detail += "D=" + std::to_string(d) + ": " + fmt(mse) + " ";
        if (std::isfinite(previous)) {
            rise = std::max(rise, mse - previous);
        }
        previous = mse;
    }
    r.checks.push_back(make_check("reconstruction MSE increase from one depth to the next", rise, "<=", 0.0, detail));
}

std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) {
            continue;
        }
        std::ifstream in(e.path(), std::ios::binary);
        files[std::filesystem::relative(e.path(), dir).string()] =
            std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    return files;
}

void suite_reproducibility(const Options& o, SuiteReport& r) {
    const auto dir = o.work_dir / ("reproducibility-" + std::to_string(o.seed));
    const std::string d = dir.string();
    const std::string seed = std::to_string(o.seed);
    const std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
        {"train-codebooks",
         {"train-codebooks", "--out", d + "/books", "--depth", "2", "--codebook-size", "8", "--latent-dim", "8",
          "--n-sequences", "8", "--frames", "20", "--iterations", "10", "--seed", seed}},
        {"make-dataset",
         {"make-dataset", "--codebooks", d + "/books/codebooks.json", "--out", d + "/data", "--n-pairs", "12",
          "--frames", "6", "--seed", seed}},
        {"train",
         {"train", "--dataset", d + "/data/dataset.json", "--codebooks", d + "/books/codebooks.json", "--out",
          d + "/model", "--steps", "3", "--batch-size", "4", "--hidden-dim", "8", "--lr", "1e-3", "--seed", seed}},
        {"enhance",
         {"enhance", "--input", d + "/input.wav", "--output", d + "/enhanced/out.wav", "--codebooks",
          d + "/books/codebooks.json", "--checkpoint", d + "/model/model.json", "--n-steps", "8", "--seed", seed}},
        {"sample",
         {"sample", "--dataset", d + "/data/dataset.json", "--codebooks", d + "/books/codebooks.json", "--checkpoint",
          d + "/model/model.json", "--index", "1", "--n-steps", "8", "--out", d + "/sample", "--seed", seed}},
        {"sweep-steps",
         {"sweep-steps", "--dataset", d + "/data/dataset.json", "--codebooks", d + "/books/codebooks.json",
          "--checkpoint", d + "/model/model.json", "--steps-list", "1,4,16", "--n-examples", "3", "--out",
          d + "/sweep", "--seed", seed}},
        {"eval",
         {"eval", "--dataset", d + "/data/dataset.json", "--codebooks", d + "/books/codebooks.json", "--checkpoint",
          d + "/model/model.json", "--n-lambda", "4", "--out", d + "/eval", "--seed", seed}},
        {"verify", {"verify", "--suite", "forward-marginal", "--out", d + "/verify", "--seed", seed}},
    };
    std::vector<std::map<std::string, std::string>> runs;
    for (int run = 0; run < 2; ++run) {
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        std::vector<double> tone(16000);
        for (std::size_t i = 0; i < tone.size(); ++i) {
            tone[i] = 0.5 * std::sin(2.0 * 3.141592653589793 * 440.0 * static_cast<double>(i) / 16000.0);
        }
        wav_write(dir / "input.wav", tone, 16000);
        for (const auto& [name, args] : commands) {
            std::ostringstream out;
            std::ostringstream err;
            const int code = cli::run(args, out, err);
            if (code != 0) {
                r.checks.push_back(make_check(name + " exit code", code, "==", 0.0, err.str()));
                return;
            }
        }
        runs.push_back(snapshot(dir));
    }
    std::filesystem::remove_all(dir);
    for (const auto& [name, args] : commands) {
        const std::string prefix = [&] {
            for (std::size_t i = 0; i + 1 < args.size(); ++i) {
                if (args[i] == "--out") {
                    return std::filesystem::path(args[i + 1]).filename().string();
                }
                if (args[i] == "--output") {
                    return std::filesystem::path(args[i + 1]).parent_path().filename().string();
                }
            }
            return std::string();
        }();
        std::size_t files = 0;
        std::size_t differing = 0;
        for (const auto& [path, bytes] : runs[0]) {
            if (path.rfind(prefix + "/", 0) != 0) {
                continue;
            }
            ++files;
            const auto other = runs[1].find(path);
            differing += other != runs[1].end() && other->second == bytes ? 0 : 1;
        }
        r.checks.push_back(make_check(name + ": files differing between two runs", static_cast<double>(differing),
                                      "==", 0.0, std::to_string(files) + " files compared"));
        r.checks.push_back(make_check(name + ": output files written", static_cast<double>(files), ">", 0.0));
    }
}

void suite_end_to_end(const Options& o, SuiteReport& r) {
    const auto& e = o.end_to_end;
    const auto latents = generate_clean_latents(200, e.frames, e.latent_dim, 0.9, derive_seed(o.seed, 900));
    CodebookTrainingOptions copts;
    copts.depth = e.depth;
    copts.codebook_size = e.codebook_size;
    copts.iterations = 50;
    copts.seed = derive_seed(o.seed, 901);
    const CodebookSet books = train_codebooks(latents, copts);
    say(o, "end-to-end: codebooks trained");

    PairGenConfig gen;
    gen.frames = e.frames;
    const auto train_set = generate_paired_dataset(gen, books, e.train_pairs, derive_seed(o.seed, 902));
    const auto heldout = generate_paired_dataset(gen, books, e.heldout_pairs, derive_seed(o.seed, 903));
    PairGenConfig zero_db = gen;
    zero_db.snr_override_db = 0.0;
    const auto enhance_set = generate_paired_dataset(zero_db, books, e.eval_pairs, derive_seed(o.seed, 904));

    RQDiTConfig mcfg;
    mcfg.hidden_dim = e.hidden_dim;
    mcfg.codebook_size = e.codebook_size;
    mcfg.depth = e.depth;
    mcfg.latent_dim = e.latent_dim;
    RQDiT model(mcfg, books, derive_seed(o.seed, 905));

    DCEConfig dcfg;
    dcfg.batch_size = e.batch_size;
    dcfg.steps = e.steps;
    dcfg.lr = e.lr;
    const std::size_t n_lambda = 8;
    const double log_k = std::log(static_cast<double>(e.codebook_size));
    const double initial = eval_dce(model, heldout, dcfg, n_lambda, derive_seed(o.seed, 906));

    AdamWConfig acfg;
    acfg.lr = e.lr;
    acfg.clip_norm = dcfg.clip_norm;
    AdamW opt(acfg);
    Rng rng(derive_seed(o.seed, 907));
    train(model, train_set, dcfg, opt, rng, [&](const StepMetrics& m) {
        if (m.step % 1000 == 0) {
            say(o, "end-to-end: step " + std::to_string(m.step) + " loss " + fmt(m.loss));
        }
    });
    const double trained = eval_dce(model, heldout, dcfg, n_lambda, derive_seed(o.seed, 906));
    const double reduction = 1.0 - trained / log_k;
    r.checks.push_back(make_check("held-out DCE reduction below log K", reduction, ">=", 0.30,
                                  "DCE " + fmt(trained) + " (init " + fmt(initial) + ", log K " + fmt(log_k) + ")"));
    r.checks.push_back(make_check("held-out DCE after training < at initialization", trained, "<", initial));

    double noisy_acc = 0.0;
    double acc_categorical = 0.0;
    double acc_argmax = 0.0;
    for (std::size_t i = 0; i < enhance_set.size(); ++i) {
        SamplerConfig scfg;
        scfg.n_steps = e.sample_steps;
        scfg.seed = derive_seed(o.seed, 10000 + i);
        acc_categorical += token_accuracy(sample(model, enhance_set.noisy[i], scfg).first, enhance_set.clean[i]);
        scfg.decode_mode = DecodeMode::argmax;
        acc_argmax += token_accuracy(sample(model, enhance_set.noisy[i], scfg).first, enhance_set.clean[i]);
        noisy_acc += token_accuracy(enhance_set.noisy[i], enhance_set.clean[i]);
    }
    const auto n_eval = static_cast<double>(enhance_set.size());
    noisy_acc /= n_eval;
    acc_categorical /= n_eval;
    acc_argmax /= n_eval;
    const bool argmax = e.decode == DecodeMode::argmax;
    const double enhanced_acc = argmax ? acc_argmax : acc_categorical;
    r.checks.push_back(make_check("enhanced token accuracy at 0 dB exceeds noisy-input accuracy", enhanced_acc, ">",
                                  noisy_acc,
                                  std::string(argmax ? "argmax" : "categorical") + " decoding; categorical " +
                                      fmt(acc_categorical) + ", argmax " + fmt(acc_argmax) + ", noisy " +
                                      fmt(noisy_acc)));

    if (e.reference && std::filesystem::exists(*e.reference)) {
        std::ifstream in(*e.reference);
        const auto ref = nlohmann::json::parse(in);
        const double ref_dce = ref.at("heldout_dce").get<double>();
        const double dce_tol = ref.at("heldout_dce_tolerance").get<double>();
        const double ref_acc = ref.at("enhanced_token_accuracy").get<double>();
        const double acc_tol = ref.at("enhanced_token_accuracy_tolerance").get<double>();
        r.checks.push_back(make_check("held-out DCE within pinned reference", trained, "<=", ref_dce + dce_tol,
                                      "reference " + fmt(ref_dce)));
        r.checks.push_back(make_check("enhanced accuracy within pinned reference", enhanced_acc, ">=",
                                      ref_acc - acc_tol, "reference " + fmt(ref_acc)));
    }
}

}  // namespace

double Check::margin() const {
    if (relation == "<" || relation == "<=") {
        return threshold - value;
    }
    if (relation == ">" || relation == ">=") {
        return value - threshold;
    }
    return -std::abs(value - threshold);
}

bool SuiteReport::passed() const { return first_failure() == nullptr && !checks.empty(); }

const Check* SuiteReport::first_failure() const {
    for (const auto& c : checks) {
        if (!c.passed) {
            return &c;
        }
    }
    return nullptr;
}

std::filesystem::path default_fixture_dir() { return std::filesystem::path(ADDSE_SOURCE_DIR) / "tests" / "fixtures"; }

Options::Options() : fixture_dir(default_fixture_dir()), work_dir(std::filesystem::temp_directory_path()) {}

std::vector<std::string> default_suites() {
    return {"forward-marginal", "posterior-equivalence", "sampler-TV", "one-step", "dce",
            "nfe",              "gradient-check",        "rqdit-structure", "rvq", "reproducibility"};
}

std::vector<std::string> all_suites() {
    auto names = default_suites();
    names.push_back("end-to-end");
    return names;
}

SuiteReport run_suite(const std::string& name, const Options& options) {
    using Fn = void (*)(const Options&, SuiteReport&);
    static const std::map<std::string, Fn> suites = {
        {"forward-marginal", suite_forward_marginal},
        {"posterior-equivalence", suite_posterior_equivalence},
        {"sampler-TV", suite_sampler_tv},
        {"one-step", suite_one_step},
        {"dce", suite_dce},
        {"nfe", suite_nfe},
        {"gradient-check", suite_gradient_check},
        {"rqdit-structure", suite_rqdit_structure},
        {"rvq", suite_rvq},
        {"reproducibility", suite_reproducibility},
        {"end-to-end", suite_end_to_end},
    };
    const auto it = suites.find(name);
    if (it == suites.end()) {
        std::string known;
        for (const auto& s : all_suites()) {
            known += " " + s;
        }
        fail(ErrorKind::usage, "unknown suite '" + name + "'; known suites:" + known);
    }
    SuiteReport report;
    report.suite = name;
    try {
        it->second(options, report);
    } catch (const std::exception& e) {
        report.checks.push_back(make_check(name + " raised an error", 1.0, "==", 0.0, e.what()));
    }
    return report;
}

nlohmann::ordered_json to_json(const std::vector<SuiteReport>& reports) {
    nlohmann::ordered_json doc;
    bool all = true;
    auto suites = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        all = all && r.passed();
        auto checks = nlohmann::ordered_json::array();
        for (const auto& c : r.checks) {
            checks.push_back({{"name", c.name},
                              {"passed", c.passed},
                              {"value", c.value},
                              {"relation", c.relation},
                              {"threshold", c.threshold},
                              {"margin", c.margin()},
                              {"detail", c.detail}});
        }
        suites.push_back({{"suite", r.suite}, {"passed", r.passed()}, {"checks", std::move(checks)}});
    }
    doc["passed"] = all;
    doc["suites"] = std::move(suites);
    return doc;
}

}  // namespace addse::verify
