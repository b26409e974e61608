// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "addse/sampler.hpp"

namespace addse::verify {

struct Check {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation;  // "<", "<=", ">", ">=", "=="
    std::string detail;

    // Distance to the threshold, positive when passing.
    double margin() const;
};

struct SuiteReport {
    std::string suite;
    std::vector<Check> checks;

    bool passed() const;
    const Check* first_failure() const;
};

// Knobs for the end-to-end suite; defaults are the full acceptance run.
struct EndToEndConfig {
    std::size_t codebook_size = 64;
    std::size_t depth = 2;
    std::size_t latent_dim = 8;
    std::size_t frames = 50;
    std::size_t train_pairs = 5000;
    std::size_t heldout_pairs = 200;
    std::size_t eval_pairs = 100;  // 0 dB enhancement set
    std::size_t steps = 20000;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    std::size_t hidden_dim = 32;
    std::size_t sample_steps = 64;
    // Decoding used for the gated accuracy; the other mode is reported too.
    DecodeMode decode = DecodeMode::categorical;
    // Compare against the pinned reference values when present.
    std::optional<std::filesystem::path> reference;
};

struct Options {
    std::uint64_t seed = 0;
    std::filesystem::path fixture_dir;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> codebooks;
    std::filesystem::path work_dir;
    EndToEndConfig end_to_end;
    std::function<void(const std::string&)> log;

    Options();
};

// Suites run by "all"; end-to-end is long and must be requested by name.
std::vector<std::string> default_suites();
std::vector<std::string> all_suites();

// Throws usage for an unknown suite name.
SuiteReport run_suite(const std::string& name, const Options& options);

nlohmann::ordered_json to_json(const std::vector<SuiteReport>& reports);

std::filesystem::path default_fixture_dir();

}  // namespace addse::verify
