// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/joint_table.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

namespace addse {

JointTable::JointTable(std::size_t frames, std::size_t depth, std::size_t codebook_size, std::vector<double> probs)
    : frames_(frames), depth_(depth), codebook_size_(codebook_size), probs_(std::move(probs)) {
    require(frames >= 1 && depth >= 1 && codebook_size >= 1, ErrorKind::config, "JointTable: empty shape");
    checked_power(codebook_size, 2 * frames * depth, kCapacity);
    grid_count_ = checked_power(codebook_size, frames * depth, kCapacity);
    require(probs_.size() == grid_count_ * grid_count_, ErrorKind::config,
            "JointTable: expected " + std::to_string(grid_count_ * grid_count_) + " entries, got " +
                std::to_string(probs_.size()));
    cumulative_.resize(probs_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
        require(std::isfinite(probs_[i]) && probs_[i] >= 0.0, ErrorKind::invalid_input,
                "JointTable: entry " + std::to_string(i) + " is negative or non-finite");
        total += probs_[i];
        cumulative_[i] = total;
    }
    require(std::abs(total - 1.0) <= 1e-12, ErrorKind::invalid_input,
            "JointTable: mass sums to " + std::to_string(total));
}

CodeGrid JointTable::grid(std::uint64_t index) const {
    return grid_from_index(index, frames_, depth_, codebook_size_, codebook_size_);
}

std::vector<double> JointTable::clean_given_noisy(const CodeGrid& noisy) const {
    require(noisy.frames() == frames_ && noisy.depth() == depth_ && noisy.codebook_size() == codebook_size_,
            ErrorKind::config, "JointTable: noisy grid shape does not match the table");
    noisy.validate(false);
    const std::uint64_t n = grid_index(noisy, codebook_size_);
    std::vector<double> out(grid_count_);
    double total = 0.0;
    for (std::uint64_t c = 0; c < grid_count_; ++c) {
        out[c] = mass(c, n);
        total += out[c];
    }
    require(total > 0.0, ErrorKind::invalid_input, "JointTable: noisy grid has zero marginal mass");
    for (double& v : out) {
        v /= total;
    }
    return out;
}

std::pair<CodeGrid, CodeGrid> JointTable::sample_pair(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    auto flat = static_cast<std::uint64_t>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                                     static_cast<std::ptrdiff_t>(probs_.size() - 1)));
    while (probs_[flat] == 0.0 && flat > 0) {
        --flat;  // u landed exactly on a boundary before a zero-mass run
    }
    return {grid(flat / grid_count_), grid(flat % grid_count_)};
}

JointTable make_coupled_channel_table(std::size_t frames, std::size_t depth, std::size_t codebook_size,
                                      double coupling, double keep) {
    require(codebook_size >= 2, ErrorKind::config, "coupled channel table needs K >= 2");
    require(keep >= 0.0 && keep <= 1.0, ErrorKind::config, "coupled channel table: keep outside [0, 1]");
    const std::uint64_t g = checked_power(codebook_size, frames * depth, JointTable::kCapacity);
    checked_power(codebook_size, 2 * frames * depth, JointTable::kCapacity);
    const double flip = (1.0 - keep) / static_cast<double>(codebook_size - 1);

    std::vector<double> prior(g);
    std::vector<CodeGrid> grids;
    grids.reserve(g);
    double z = 0.0;
    for (std::uint64_t c = 0; c < g; ++c) {
        grids.push_back(grid_from_index(c, frames, depth, codebook_size, codebook_size));
        const CodeGrid& grid = grids.back();
        int agreements = 0;
        for (std::size_t i = 0; i < frames; ++i) {
            for (std::size_t j = 0; j < depth; ++j) {
                if (i + 1 < frames && grid(i, j) == grid(i + 1, j)) ++agreements;
                if (j + 1 < depth && grid(i, j) == grid(i, j + 1)) ++agreements;
            }
        }
        prior[c] = std::exp(coupling * agreements);
        z += prior[c];
    }
    std::vector<double> probs(g * g);
    double total = 0.0;
    for (std::uint64_t c = 0; c < g; ++c) {
        for (std::uint64_t n = 0; n < g; ++n) {
            double channel = 1.0;
            for (std::size_t p = 0; p < grids[c].size(); ++p) {
                channel *= grids[c][p] == grids[n][p] ? keep : flip;
            }
            probs[c * g + n] = prior[c] / z * channel;
            total += probs[c * g + n];
        }
    }
    for (double& v : probs) {
        v /= total;
    }
    return JointTable(frames, depth, codebook_size, std::move(probs));
}

JointTable reference_joint_table() {
    return make_coupled_channel_table(2, 2, 3, 0.8, 0.75);
}

ConditionalProbs exact_posterior(const JointTable& table, const MaskedGrid& masked, const CodeGrid& noisy,
                                 PosteriorDiagnostics* diagnostics) {
    const std::size_t k = table.codebook_size();
    require(masked.frames() == table.frames() && masked.depth() == table.depth() && masked.codebook_size() == k,
            ErrorKind::config, "exact_posterior: masked grid shape does not match the table");
    require(masked.same_shape(noisy), ErrorKind::config, "exact_posterior: masked/noisy shape mismatch");
    masked.validate(true);
    noisy.validate(false);

    const std::uint64_t noisy_index = grid_index(noisy, k);
    const std::size_t n = masked.size();
    ConditionalProbs out(masked.frames(), masked.depth(), k);
    double total = 0.0;
    for (std::uint64_t c = 0; c < table.grid_count(); ++c) {
        const double w = table.mass(c, noisy_index);
        if (w == 0.0) {
            continue;
        }
        const CodeGrid clean = table.grid(c);
        bool consistent = true;
        for (std::size_t p = 0; p < n && consistent; ++p) {
            consistent = masked.is_masked(p) || masked[p] == clean[p];
        }
        if (!consistent) {
            continue;
        }
        total += w;
        for (std::size_t p = 0; p < n; ++p) {
            if (masked.is_masked(p)) {
                out.row(p)[static_cast<std::size_t>(clean[p])] += w;
            }
        }
    }
    const bool zero_mass = total == 0.0;
    if (zero_mass && diagnostics) {
        ++diagnostics->zero_mass_events;
    }
    for (std::size_t p = 0; p < n; ++p) {
        auto row = out.row(p);
        if (!masked.is_masked(p)) {
            std::fill(row.begin(), row.end(), 0.0);
            row[static_cast<std::size_t>(masked[p])] = 1.0;
        } else if (zero_mass) {
            std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(k));
        } else {
            for (double& v : row) {
                v /= total;
            }
        }
    }
    return out;
}

ConditionalProbs ExactOracleModel::predict(const MaskedGrid& masked, const CodeGrid& noisy) const {
    check_inputs(masked, noisy);
    PosteriorDiagnostics diag;
    auto out = exact_posterior(table_, masked, noisy, &diag);
    zero_mass_events_ += diag.zero_mass_events;
    return out;
}

void save_joint_table(const std::filesystem::path& path, const JointTable& table) {
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["L"] = table.frames();
    doc["D"] = table.depth();
    doc["K"] = table.codebook_size();
    doc["index_order"] =
        "probs[clean * K^(L*D) + noisy]; grid index is row-major (frame, depth), first position most significant";
    doc["probs"] = table.probs();
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << doc.dump() << '\n';
}

JointTable load_joint_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
    try {
        const auto doc = nlohmann::json::parse(in);
        return JointTable(doc.at("L").get<std::size_t>(), doc.at("D").get<std::size_t>(),
                          doc.at("K").get<std::size_t>(), doc.at("probs").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
}

}  // namespace addse
