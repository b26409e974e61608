// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/tabular.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "addse/diffusion.hpp"
#include "addse/training.hpp"

namespace addse {
namespace {

// E_{lambda ~ U[0,1]} [ lambda^{m-1} (1 - lambda)^{n-m} ] = B(m, n - m + 1).
double mask_pattern_weight(std::size_t masked, std::size_t n) {
    return std::exp(std::lgamma(static_cast<double>(masked)) + std::lgamma(static_cast<double>(n - masked + 1)) -
                    std::lgamma(static_cast<double>(n + 1)));
}

CodeGrid apply_mask_pattern(const CodeGrid& clean, std::uint32_t pattern) {
    CodeGrid out = clean;
    for (std::size_t p = 0; p < out.size(); ++p) {
        if (pattern & (1u << p)) {
            out[p] = out.mask();
        }
    }
    return out;
}

double softmax_into(std::span<const double> logits, std::span<double> out) {
    const double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - top);
        total += out[k];
    }
    for (double& v : out) {
        v /= total;
    }
    return total;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) {
            acc += p[k] * (std::log(p[k]) - std::log(q[k]));
        }
    }
    return acc;
}

}  // namespace

TabularModel::TabularModel(std::size_t frames, std::size_t depth, std::size_t codebook_size)
    : frames_(frames), depth_(depth), codebook_size_(codebook_size) {
    require(frames >= 1 && depth >= 1 && codebook_size >= 2, ErrorKind::config, "TabularModel: invalid shape");
    const std::size_t n = frames * depth;
    noisy_count_ = checked_power(codebook_size, n, kMaxRows);
    masked_count_ = checked_power(codebook_size + 1, n, kMaxRows);
    require(noisy_count_ * masked_count_ <= kMaxRows / n, ErrorKind::capacity,
            "TabularModel: " + std::to_string(noisy_count_) + " noisy x " + std::to_string(masked_count_) +
                " masked configurations x " + std::to_string(n) + " positions exceed " + std::to_string(kMaxRows) +
                " rows");
    rows_ = noisy_count_ * masked_count_ * n;
    params_.add("logits", {static_cast<std::size_t>(rows_), codebook_size});
}

std::uint64_t TabularModel::row_index(const MaskedGrid& masked, const CodeGrid& noisy, std::size_t position) const {
    const std::uint64_t n_idx = grid_index(noisy, codebook_size_);
    const std::uint64_t m_idx = grid_index(masked, codebook_size_ + 1);
    return (n_idx * masked_count_ + m_idx) * (frames_ * depth_) + position;
}

ConditionalProbs TabularModel::forward_logits(const MaskedGrid& masked, const CodeGrid& noisy) {
    check_inputs(masked, noisy);
    require(masked.frames() == frames_ && masked.depth() == depth_, ErrorKind::config,
            "TabularModel: grid shape differs from the table shape");
    masked.validate(true);
    noisy.validate(false);
    ConditionalProbs logits(frames_, depth_, codebook_size_);
    last_rows_.resize(masked.size());
    const auto values = params_.values();
    for (std::size_t p = 0; p < masked.size(); ++p) {
        const std::uint64_t r = row_index(masked, noisy, p);
        last_rows_[p] = r;
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(r * codebook_size_), codebook_size_,
                    logits.row(p).begin());
    }
    return logits;
}

ConditionalProbs TabularModel::predict(const MaskedGrid& masked, const CodeGrid& noisy) const {
    check_inputs(masked, noisy);
    require(masked.frames() == frames_ && masked.depth() == depth_, ErrorKind::config,
            "TabularModel: grid shape differs from the table shape");
    masked.validate(true);
    noisy.validate(false);
    ConditionalProbs probs(frames_, depth_, codebook_size_);
    const auto values = params_.values();
    for (std::size_t p = 0; p < masked.size(); ++p) {
        const std::uint64_t r = row_index(masked, noisy, p);
        softmax_into({values.data() + r * codebook_size_, codebook_size_}, probs.row(p));
    }
    return probs;
}

void TabularModel::backward(const ConditionalProbs& dlogits) {
    require(last_rows_.size() == dlogits.positions(), ErrorKind::usage, "TabularModel::backward without forward");
    auto grads = params_.grads();
    for (std::size_t p = 0; p < last_rows_.size(); ++p) {
        auto g = dlogits.row(p);
        for (std::size_t k = 0; k < codebook_size_; ++k) {
            grads[last_rows_[p] * codebook_size_ + k] += g[k];
        }
    }
}

double expected_dce(const ConditionalModel& model, const JointTable& table) {
    const std::size_t l = table.frames();
    const std::size_t d = table.depth();
    const std::size_t n = l * d;
    require(n < 32, ErrorKind::capacity, "expected_dce: too many positions");
    double total = 0.0;
    for (std::uint64_t ni = 0; ni < table.grid_count(); ++ni) {
        const CodeGrid noisy = table.grid(ni);
        for (std::uint64_t c = 0; c < table.grid_count(); ++c) {
            const double w = table.mass(c, ni);
            if (w == 0.0) {
                continue;
            }
            const CodeGrid clean = table.grid(c);
            for (std::uint32_t pattern = 1; pattern < (1u << n); ++pattern) {
                const std::size_t m = static_cast<std::size_t>(std::popcount(pattern));
                const CodeGrid masked = apply_mask_pattern(clean, pattern);
                const auto q = model.predict(masked, noisy);
                double nll = 0.0;
                for (std::size_t p = 0; p < n; ++p) {
                    if (pattern & (1u << p)) {
                        nll -= std::log(q.row(p)[static_cast<std::size_t>(clean[p])]);
                    }
                }
                total += w * mask_pattern_weight(m, n) * nll / static_cast<double>(n);
            }
        }
    }
    return total;
}

PosteriorGap posterior_gap(const ConditionalModel& model, const JointTable& table) {
    const std::size_t n = table.positions();
    const std::size_t k = table.codebook_size();
    const std::uint64_t masked_count = checked_power(k + 1, n, JointTable::kCapacity);
    PosteriorGap gap;
    double sum = 0.0;
    for (std::uint64_t ni = 0; ni < table.grid_count(); ++ni) {
        const CodeGrid noisy = table.grid(ni);
        for (std::uint64_t mi = 0; mi < masked_count; ++mi) {
            const MaskedGrid masked = grid_from_index(mi, table.frames(), table.depth(), k, k + 1);
            if (!masked.has_mask()) {
                continue;
            }
            PosteriorDiagnostics diag;
            const auto target = exact_posterior(table, masked, noisy, &diag);
            if (diag.zero_mass_events > 0) {
                continue;  // unreachable configuration
            }
            const auto q = model.predict(masked, noisy);
            for (std::size_t p = 0; p < n; ++p) {
                if (!masked.is_masked(p)) {
                    continue;
                }
                const double kl = kl_divergence(target.row(p), q.row(p));
                sum += kl;
                gap.max_kl = std::max(gap.max_kl, kl);
                ++gap.rows;
            }
        }
    }
    gap.mean_kl = gap.rows > 0 ? sum / static_cast<double>(gap.rows) : 0.0;
    return gap;
}

TabularTrainReport tabular_train(TabularModel& model, const JointTable& table, const TabularTrainOptions& options) {
    require(options.lr > 0.0, ErrorKind::config, "tabular_train: learning rate must be positive");
    require(model.frames() == table.frames() && model.depth() == table.depth() &&
                model.codebook_size() == table.codebook_size(),
            ErrorKind::config, "tabular_train: model and table shapes differ");
    const std::size_t n = table.positions();
    const std::size_t k = table.codebook_size();
    auto values = model.params().values();
    std::vector<double> velocity(values.size(), 0.0);
    TabularTrainReport report;

    if (options.objective == TabularTrainOptions::Objective::exact) {
        require(n < 32, ErrorKind::capacity, "tabular_train: too many positions");
        // Expected DCE collapses to per-row weighted cross-entropies:
        // sum_r sum_k target[r][k] * -log q_r(k).
        std::vector<double> target(values.size(), 0.0);
        std::vector<double> weight(model.rows(), 0.0);
        for (std::uint64_t ni = 0; ni < table.grid_count(); ++ni) {
            const CodeGrid noisy = table.grid(ni);
            for (std::uint64_t c = 0; c < table.grid_count(); ++c) {
                const double w = table.mass(c, ni);
                if (w == 0.0) {
                    continue;
                }
                const CodeGrid clean = table.grid(c);
                for (std::uint32_t pattern = 1; pattern < (1u << n); ++pattern) {
                    const double pw = w * mask_pattern_weight(static_cast<std::size_t>(std::popcount(pattern)), n) /
                                      static_cast<double>(n);
                    const CodeGrid masked = apply_mask_pattern(clean, pattern);
                    for (std::size_t p = 0; p < n; ++p) {
                        if (pattern & (1u << p)) {
                            const std::uint64_t r = model.row_index(masked, noisy, p);
                            weight[r] += pw;
                            target[r * k + static_cast<std::size_t>(clean[p])] += pw;
                        }
                    }
                }
            }
        }
        std::vector<std::uint64_t> live;
        for (std::uint64_t r = 0; r < model.rows(); ++r) {
            if (weight[r] > 0.0) {
                live.push_back(r);
            }
        }
        std::vector<double> q(k);
        auto loss_now = [&] {
            double loss = 0.0;
            for (std::uint64_t r : live) {
                softmax_into({values.data() + r * k, k}, q);
                for (std::size_t c = 0; c < k; ++c) {
                    if (target[r * k + c] > 0.0) {
                        loss -= target[r * k + c] * std::log(q[c]);
                    }
                }
            }
            return loss;
        };
        report.initial_loss = loss_now();
        for (std::size_t step = 0; step < options.steps; ++step) {
            // Each row descends its own conditional cross-entropy (gradient
            // divided by the row's total weight); same stationary point as the
            // expected DCE, without starving rarely-visited configurations.
            for (std::uint64_t r : live) {
                softmax_into({values.data() + r * k, k}, q);
                for (std::size_t c = 0; c < k; ++c) {
                    const std::size_t at = r * k + c;
                    const double g = q[c] - target[at] / weight[r];
                    velocity[at] = options.momentum * velocity[at] + g;
                    values[at] -= options.lr * velocity[at];
                }
            }
        }
        report.final_loss = loss_now();
        require(std::isfinite(report.final_loss), ErrorKind::training, "tabular_train: loss is not finite");
        return report;
    }

    // Stream objective.
    DCEConfig dce;
    dce.lambda_min = options.lambda_min;
    Rng rng(options.seed);
    Rng held_rng(derive_seed(options.seed, 1));
    struct Example {
        CodeGrid clean, noisy, masked;
        double lam;
    };
    std::vector<Example> held_out;
    for (int i = 0; i < 2000; ++i) {
        auto [clean, noisy] = table.sample_pair(held_rng);
        const double lam = options.lambda_min + (1.0 - options.lambda_min) * held_rng.uniform();
        auto masked = forward_corrupt(clean, lam, held_rng);
        held_out.push_back({std::move(clean), std::move(noisy), std::move(masked), lam});
    }
    auto held_loss = [&] {
        double acc = 0.0;
        for (const auto& ex : held_out) {
            acc += dce_loss(model.predict(ex.masked, ex.noisy), ex.clean, ex.masked, ex.lam).normalized;
        }
        return acc / static_cast<double>(held_out.size());
    };
    report.initial_loss = held_loss();
    auto grads = model.params().grads();
    ConditionalProbs dlogits;
    for (std::size_t step = 0; step < options.steps; ++step) {
        auto [clean, noisy] = table.sample_pair(rng);
        const double lam = options.lambda_min + (1.0 - options.lambda_min) * rng.uniform();
        const auto masked = forward_corrupt(clean, lam, rng);
        model.params().zero_grad();
        const auto logits = model.forward_logits(masked, noisy);
        const auto value = dce_loss_from_logits(logits, clean, masked, lam, &dlogits);
        if (std::isnan(value.normalized)) {
            fail(ErrorKind::training, "tabular_train: NaN loss at step " + std::to_string(step));
        }
        model.backward(dlogits);
        for (std::size_t i = 0; i < values.size(); ++i) {
            velocity[i] = options.momentum * velocity[i] + grads[i];
            values[i] -= options.lr * velocity[i];
        }
    }
    report.final_loss = held_loss();
    require(std::isfinite(report.final_loss), ErrorKind::training, "tabular_train: loss is not finite");
    return report;
}

void save_tabular(const std::filesystem::path& path, const TabularModel& model) {
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["L"] = model.frames();
    doc["D"] = model.depth();
    doc["K"] = model.codebook_size();
    doc["rows"] = model.rows();
    doc["row_order"] = "(noisy index * (K+1)^(L*D) + masked index) * (L*D) + position";
    const auto values = model.params().values();
    auto logits = nlohmann::ordered_json::array();
    const std::size_t k = model.codebook_size();
    for (std::uint64_t r = 0; r < model.rows(); ++r) {
        logits.push_back(std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(r * k),
                                             values.begin() + static_cast<std::ptrdiff_t>((r + 1) * k)));
    }
    doc["logits"] = std::move(logits);
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << doc.dump() << '\n';
}

TabularModel load_tabular(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
    try {
        const auto doc = nlohmann::json::parse(in);
        TabularModel model(doc.at("L").get<std::size_t>(), doc.at("D").get<std::size_t>(),
                           doc.at("K").get<std::size_t>());
        const auto& logits = doc.at("logits");
        require(logits.size() == model.rows(), ErrorKind::format, path.string() + ": row count mismatch");
        auto values = model.params().values();
        const std::size_t k = model.codebook_size();
        for (std::size_t r = 0; r < logits.size(); ++r) {
            require(logits[r].size() == k, ErrorKind::format, path.string() + ": row length mismatch");
            for (std::size_t c = 0; c < k; ++c) {
                values[r * k + c] = logits[r][c].get<double>();
            }
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
}

}  // namespace addse
