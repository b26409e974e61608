// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "addse/checkpoint.hpp"
#include "addse/cli.hpp"
#include "addse/codec.hpp"
#include "addse/rng.hpp"
#include "addse/wav.hpp"

using namespace addse;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) {
        out.push_back(line);
    }
    return out;
}

// Small shared workspace built once per test binary.
struct Workspace {
    fs::path root = fs::temp_directory_path() / "addse_test_cli";

    Workspace() {
        fs::remove_all(root);
        fs::create_directories(root);
        REQUIRE(run({"--seed", "3", "train-codebooks", "--out", (root / "cb").string(), "--depth", "2",
                     "--codebook-size", "8", "--latent-dim", "4", "--n-sequences", "20", "--frames", "40",
                     "--iterations", "5"})
                    .code == cli::kOk);
        REQUIRE(run({"--seed", "4", "make-dataset", "--codebooks", books().string(), "--out",
                     (root / "ds").string(), "--n-pairs", "12", "--frames", "10"})
                    .code == cli::kOk);
        REQUIRE(run({"--seed", "5", "train", "--dataset", dataset().string(), "--codebooks", books().string(),
                     "--out", (root / "model").string(), "--steps", "3", "--batch-size", "4", "--hidden-dim",
                     "8", "--n-layers", "1"})
                    .code == cli::kOk);
    }
    fs::path books() const { return root / "cb" / "codebooks.json"; }
    fs::path dataset() const { return root / "ds" / "dataset.json"; }
    fs::path model() const { return root / "model" / "model.json"; }
};

const Workspace& workspace() {
    static Workspace ws;
    return ws;
}

}  // namespace

TEST_CASE("usage errors exit 2 with a hint") {
    const auto& ws = workspace();
    auto r = run({"train", "--dataset", (ws.root / "nope.json").string(), "--codebooks", ws.books().string(),
                  "--out", (ws.root / "x").string()});
    CHECK(r.code == cli::kUsage);
    CHECK(r.err.find("nope.json") != std::string::npos);
    CHECK(r.err.find("make-dataset") != std::string::npos);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
    CHECK(run({"train-codebooks"}).code == cli::kUsage);
    CHECK(run({"train-codebooks", "--out", (ws.root / "y").string(), "--rho", "2"}).code == cli::kUsage);
    CHECK(run({"enhance", "--input", (ws.root / "none.wav").string(), "--output", (ws.root / "o.wav").string(),
               "--model", "uniform", "--codebooks", ws.books().string()})
              .code == cli::kUsage);
}

TEST_CASE("--version and --help exit 0") {
    CHECK(run({"--version"}).code == cli::kOk);
    CHECK(run({"--help"}).code == cli::kOk);
}

TEST_CASE("training writes a metrics row per step and a config snapshot") {
    const auto& ws = workspace();
    const auto rows = lines(slurp(ws.root / "model" / "metrics.csv"));
    CHECK(rows.size() == 4);
    CHECK(rows[0].rfind("step,loss", 0) == 0);
    CHECK(fs::exists(ws.root / "model" / "model.bin"));
    const auto cfg = slurp(ws.root / "model" / "config.ini");
    CHECK(cfg.find("seed=5") != std::string::npos);
    CHECK(cfg.find("[train]") != std::string::npos);
    CHECK(cfg.find("steps=3") != std::string::npos);
}

TEST_CASE("zero training steps store the initialization") {
    const auto& ws = workspace();
    const auto dir = ws.root / "init";
    REQUIRE(run({"--seed", "9", "train", "--dataset", ws.dataset().string(), "--codebooks", ws.books().string(),
                 "--out", dir.string(), "--steps", "0", "--hidden-dim", "8", "--n-layers", "1"})
                .code == cli::kOk);
    const auto books = load_codebooks(ws.books());
    RQDiTConfig cfg = read_checkpoint_config(dir / "model.json");
    const RQDiT fresh(cfg, books, derive_seed(9, 1));
    const RQDiT loaded = load_checkpoint(dir / "model.json", books);
    const auto a = fresh.params().values();
    const auto b = loaded.params().values();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
    }
}

TEST_CASE("dataset generation is byte-identical across runs") {
    const auto& ws = workspace();
    const auto dir = ws.root / "ds2";
    REQUIRE(run({"--seed", "4", "make-dataset", "--codebooks", ws.books().string(), "--out", dir.string(),
                 "--n-pairs", "12", "--frames", "10"})
                .code == cli::kOk);
    CHECK(slurp(dir / "dataset.codes") == slurp(ws.root / "ds" / "dataset.codes"));
    CHECK(slurp(dir / "dataset.json") == slurp(ws.root / "ds" / "dataset.json"));
}

TEST_CASE("enhance with one step evaluates the model once") {
    const auto& ws = workspace();
    const auto in = ws.root / "in.wav";
    std::vector<double> tone(16000);
    for (std::size_t i = 0; i < tone.size(); ++i) {
        tone[i] = 0.3 * std::sin(2.0 * 3.141592653589793 * 440.0 * static_cast<double>(i) / 16000.0);
    }
    wav_write(in, tone, 16000);
    const auto outwav = ws.root / "enh.wav";
    const auto r = run({"enhance", "--input", in.string(), "--output", outwav.string(), "--model", "rqdit",
                        "--checkpoint", ws.model().string(), "--codebooks", ws.books().string(), "--n-steps", "1",
                        "--frame-size", "160"});
    REQUIRE(r.code == cli::kOk);
    const auto wave = wav_read(outwav);
    CHECK(wave.samples.size() == tone.size());
    const auto trace = lines(slurp(ws.root / "enh.trace.jsonl"));
    REQUIRE(trace.size() == 2);
    CHECK(nlohmann::json::parse(trace.back()).at("nfe") == 1);
    CHECK(fs::exists(ws.root / "enh.config.ini"));
}

TEST_CASE("sweep reports NFE within min(n, positions)") {
    const auto& ws = workspace();
    const auto dir = ws.root / "sweep";
    REQUIRE(run({"sweep-steps", "--dataset", ws.dataset().string(), "--model", "uniform", "--codebooks",
                 ws.books().string(), "--steps-list", "1,4,16,64", "--n-examples", "4", "--out", dir.string()})
                .code == cli::kOk);
    const auto rows = lines(slurp(dir / "sweep.csv"));
    REQUIRE(rows.size() == 5);
    const double positions = 10 * 2;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        std::istringstream in(rows[r]);
        std::string cell;
        std::vector<double> v;
        while (std::getline(in, cell, ',')) {
            v.push_back(std::stod(cell));
        }
        REQUIRE(v.size() == 6);
        CHECK(v[2] <= std::min(v[0], positions + 1));
        CHECK(v[1] <= v[2]);
        CHECK(v[1] >= 1.0);
    }
}

TEST_CASE("config replay reproduces a run and flags override it") {
    const auto& ws = workspace();
    const auto a = ws.root / "replay_a";
    REQUIRE(run({"--seed", "11", "train-codebooks", "--out", a.string(), "--depth", "2", "--codebook-size", "4",
                 "--latent-dim", "3", "--n-sequences", "10", "--frames", "20", "--iterations", "3"})
                .code == cli::kOk);
    const auto b = ws.root / "replay_b";
    REQUIRE(run({"--config", (a / "config.ini").string(), "train-codebooks", "--out", b.string()}).code ==
            cli::kOk);
    CHECK(slurp(a / "codebooks.json") == slurp(b / "codebooks.json"));
    const auto c = ws.root / "replay_c";
    REQUIRE(run({"--config", (a / "config.ini").string(), "train-codebooks", "--out", c.string(),
                 "--codebook-size", "5"})
                .code == cli::kOk);
    CHECK(load_codebooks(c / "codebooks.json").codebook_size() == 5);
}

TEST_CASE("verify gradient-check names a corrupted tensor") {
    const auto& ws = workspace();
    const auto dir = ws.root / "corrupt";
    fs::create_directories(dir);
    fs::copy_file(ws.model(), dir / "model.json", fs::copy_options::overwrite_existing);
    fs::copy_file(ws.root / "model" / "model.bin", dir / "model.bin", fs::copy_options::overwrite_existing);
    const auto books = load_codebooks(ws.books());
    const RQDiT model = load_checkpoint(ws.model(), books);
    const auto& target = model.params().tensors().at(model.params().find("head.1.weight"));
    {
        std::fstream f(dir / "model.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(target.offset * 4));
        const float nan = std::numeric_limits<float>::quiet_NaN();
        char buf[4];
        std::memcpy(buf, &nan, 4);
        f.write(buf, 4);
    }
    const auto ok = run({"verify", "--suite", "gradient-check", "--checkpoint", ws.model().string(),
                         "--codebooks", ws.books().string(), "--quiet"});
    CHECK(ok.code == cli::kOk);
    const auto bad = run({"verify", "--suite", "gradient-check", "--checkpoint", (dir / "model.json").string(),
                          "--codebooks", ws.books().string(), "--quiet"});
    CHECK(bad.code == cli::kFailed);
    const auto text = bad.out + bad.err;
    CHECK(text.find("FAIL") != std::string::npos);
    CHECK(text.find("head.1.weight") != std::string::npos);
    CHECK(text.find("head.0.weight") == std::string::npos);
}

TEST_CASE("verify writes a JSON report") {
    const auto& ws = workspace();
    const auto dir = ws.root / "report";
    REQUIRE(run({"verify", "--suite", "forward-marginal", "--out", dir.string(), "--quiet"}).code == cli::kOk);
    const auto doc = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(doc.at("passed") == true);
    CHECK(doc.at("suites").at(0).at("suite") == "forward-marginal");
    CHECK(run({"verify", "--suite", "no-such-suite"}).code == cli::kUsage);
}
