// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include <json.hpp>

namespace addse {
namespace {

void check_row(std::span<const double> row, std::size_t position) {
    double total = 0.0;
    for (double v : row) {
        if (!std::isfinite(v) || v < 0.0) {
            fail(ErrorKind::model_output,
                 "invalid probability row at position " + std::to_string(position) + ": negative or non-finite entry");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        fail(ErrorKind::model_output,
             "invalid probability row at position " + std::to_string(position) + ": sums to " + std::to_string(total));
    }
}

std::size_t argmax(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

void SampleTrace::write_jsonl(std::ostream& out) const {
    for (const auto& s : steps) {
        nlohmann::ordered_json rec;
        rec["step"] = s.step;
        rec["t"] = s.t;
        rec["s"] = s.s;
        rec["unmask_count"] = s.unmask_count;
        rec["evaluated"] = s.evaluated;
        out << rec.dump() << '\n';
    }
    nlohmann::ordered_json summary;
    summary["nfe"] = nfe;
    summary["n_steps"] = steps.size();
    summary["L"] = frames;
    summary["D"] = depth;
    out << summary.dump() << '\n';
}

std::vector<std::pair<double, double>> step_grid(std::size_t n_steps, double horizon) {
    require(n_steps >= 1, ErrorKind::config, "step_grid: n_steps must be >= 1");
    std::vector<std::pair<double, double>> grid;
    grid.reserve(n_steps);
    const auto n = static_cast<double>(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) {
        const double t = horizon * (1.0 - static_cast<double>(i) / n);
        const double s = i + 1 == n_steps ? 0.0 : horizon * (1.0 - static_cast<double>(i + 1) / n);
        grid.emplace_back(t, s);
    }
    return grid;
}

std::size_t reverse_step(MaskedGrid& grid, const ConditionalProbs& probs, double t, double s, Rng& rng,
                         DecodeMode mode) {
    require(s >= 0.0 && s < t, ErrorKind::range,
            "reverse_step: need 0 <= s < t, got s=" + std::to_string(s) + " t=" + std::to_string(t));
    require(probs.matches(grid), ErrorKind::config, "reverse_step: probability shape does not match the grid");
    const double unmask_prob = s == 0.0 ? 1.0 : (t - s) / t;
    std::size_t unmasked = 0;
    for (std::size_t p = 0; p < grid.size(); ++p) {
        if (!grid.is_masked(p)) {
            continue;
        }
        if (!(rng.uniform() < unmask_prob)) {
            continue;
        }
        const auto row = probs.row(p);
        check_row(row, p);
        const double u = rng.uniform();
        std::size_t code;
        if (mode == DecodeMode::argmax) {
            code = argmax(row);
        } else {
            double acc = 0.0;
            code = row.size() - 1;
            for (std::size_t k = 0; k < row.size(); ++k) {
                acc += row[k];
                if (u < acc) {
                    code = k;
                    break;
                }
            }
            while (row[code] == 0.0 && code > 0) {
                --code;  // round-off landed past the last positive entry
            }
        }
        grid[p] = static_cast<Code>(code);
        ++unmasked;
    }
    return unmasked;
}

std::pair<CodeGrid, SampleTrace> sample(const ConditionalModel& model, const CodeGrid& noisy,
                                        const SamplerConfig& cfg) {
    require(cfg.n_steps >= 1, ErrorKind::config, "sample: n_steps must be >= 1");
    require(noisy.codebook_size() == model.codebook_size(), ErrorKind::config,
            "sample: noisy grid K=" + std::to_string(noisy.codebook_size()) + " but model K=" +
                std::to_string(model.codebook_size()));
    require(!noisy.has_mask(), ErrorKind::invalid_input, "sample: noisy grid contains masks");
    noisy.validate(false);

    MaskedGrid grid = MaskedGrid::fully_masked(noisy.frames(), noisy.depth(), noisy.codebook_size());
    Rng rng(cfg.seed);
    SampleTrace trace;
    trace.frames = noisy.frames();
    trace.depth = noisy.depth();
    trace.steps.reserve(cfg.n_steps);

    ConditionalProbs cached;
    bool stale = true;
    const auto steps = step_grid(cfg.n_steps, cfg.horizon);
    for (std::size_t n = 0; n < steps.size(); ++n) {
        const auto [t, s] = steps[n];
        SampleTrace::Step rec{n, t, s, 0, false};
        if (stale || !cfg.reuse_predictions) {
            try {
                cached = model.predict(grid, noisy);
            } catch (const Error& e) {
                throw Error(e.kind(), "sampling step " + std::to_string(n) + ": " + e.what());
            } catch (const std::exception& e) {
                throw Error(ErrorKind::model_output, "sampling step " + std::to_string(n) + ": " + e.what());
            }
            rec.evaluated = true;
            ++trace.nfe;
        }
        try {
            rec.unmask_count = reverse_step(grid, cached, t, s, rng, cfg.decode_mode);
        } catch (const Error& e) {
            throw Error(e.kind(), "sampling step " + std::to_string(n) + ": " + e.what());
        }
        stale = rec.unmask_count > 0;
        trace.steps.push_back(rec);
    }
    trace.final_mask_count = grid.mask_count();
    return {std::move(grid), std::move(trace)};
}

std::vector<double> expected_distribution_one_step(const ConditionalModel& model, const CodeGrid& noisy) {
    const std::size_t k = model.codebook_size();
    const std::uint64_t count = checked_power(k, noisy.size(), std::uint64_t{1} << 24);
    const MaskedGrid all_masked = MaskedGrid::fully_masked(noisy.frames(), noisy.depth(), k);
    const auto probs = model.predict(all_masked, noisy);
    probs.validate();
    std::vector<double> out(count);
    for (std::uint64_t g = 0; g < count; ++g) {
        const CodeGrid grid = grid_from_index(g, noisy.frames(), noisy.depth(), k, k);
        double p = 1.0;
        for (std::size_t pos = 0; pos < grid.size(); ++pos) {
            p *= probs.row(pos)[static_cast<std::size_t>(grid[pos])];
        }
        out[g] = p;
    }
    return out;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    require(p.size() == q.size(), ErrorKind::config, "total_variation: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += std::abs(p[i] - q[i]);
    }
    return 0.5 * acc;
}

}  // namespace addse
