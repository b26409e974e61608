// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>

#include "addse/checkpoint.hpp"
#include "addse/error.hpp"
#include "addse/rng.hpp"

using namespace addse;
namespace fs = std::filesystem;

namespace {

CodebookSet random_books(std::size_t d, std::size_t k, std::size_t h, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> e(d * k * h);
    for (double& v : e) {
        v = rng.normal();
    }
    return CodebookSet(d, k, h, e);
}

RQDiTConfig config() {
    RQDiTConfig cfg;
    cfg.hidden_dim = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.codebook_size = 5;
    cfg.depth = 2;
    cfg.latent_dim = 3;
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ErrorKind kind_of(const std::function<void()>& f, std::string* what = nullptr) {
    try {
        f();
    } catch (const Error& e) {
        if (what != nullptr) {
            *what = e.what();
        }
        return e.kind();
    }
    FAIL("no error thrown");
    return ErrorKind::io;
}

}  // namespace

TEST_CASE("round trip rounds to float32 and is then exact") {
    TempDir dir("addse_test_ckpt_rt");
    const auto books = random_books(2, 5, 3, 1);
    RQDiT m(config(), books, 2);
    Rng rng(3);
    for (double& v : m.params().values()) {
        v += rng.normal();
    }
    save_checkpoint(dir.path / "model.json", m);
    CHECK(fs::exists(dir.path / "model.bin"));
    CHECK(fs::file_size(dir.path / "model.bin") == m.params().size() * 4);

    const RQDiT a = load_checkpoint(dir.path / "model.json", books);
    const auto src = m.params().values();
    const auto got = a.params().values();
    REQUIRE(got.size() == src.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == static_cast<double>(static_cast<float>(src[i])));
    }
    save_checkpoint(dir.path / "again.json", a);
    const RQDiT b = load_checkpoint(dir.path / "again.json", books);
    CHECK(std::equal(got.begin(), got.end(), b.params().values().begin()));

    const auto cfg = read_checkpoint_config(dir.path / "model.json");
    CHECK(cfg.hidden_dim == 8);
    CHECK(cfg.n_layers == 1);
    CHECK(cfg.codebook_size == 5);
}

TEST_CASE("shape mismatch names both sides") {
    TempDir dir("addse_test_ckpt_shape");
    RQDiT m(config(), random_books(2, 5, 3, 1), 2);
    save_checkpoint(dir.path / "model.json", m);
    std::string what;
    CHECK(kind_of([&] { load_checkpoint(dir.path / "model.json", random_books(2, 6, 3, 1)); }, &what) ==
          ErrorKind::config);
    CHECK(what.find("K=5") != std::string::npos);
    CHECK(what.find("K=6") != std::string::npos);
}

TEST_CASE("truncated payload and missing files") {
    TempDir dir("addse_test_ckpt_trunc");
    const auto books = random_books(2, 5, 3, 1);
    RQDiT m(config(), books, 2);
    save_checkpoint(dir.path / "model.json", m);
    fs::resize_file(dir.path / "model.bin", fs::file_size(dir.path / "model.bin") - 4);
    CHECK(kind_of([&] { load_checkpoint(dir.path / "model.json", books); }) == ErrorKind::format);
    fs::remove(dir.path / "model.bin");
    CHECK(kind_of([&] { load_checkpoint(dir.path / "model.json", books); }) == ErrorKind::io);
    CHECK(kind_of([&] { load_checkpoint(dir.path / "absent.json", books); }) == ErrorKind::io);
    {
        std::ofstream(dir.path / "broken.json") << "{ not json";
    }
    CHECK(kind_of([&] { load_checkpoint(dir.path / "broken.json", books); }) == ErrorKind::format);
}

TEST_CASE("non-finite payload values name the tensor") {
    TempDir dir("addse_test_ckpt_nan");
    const auto books = random_books(2, 5, 3, 1);
    RQDiT m(config(), books, 2);
    save_checkpoint(dir.path / "model.json", m);
    const auto& last = m.params().tensors().back();
    {
        std::fstream f(dir.path / "model.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(last.offset * 4));
        const float nan = std::numeric_limits<float>::quiet_NaN();
        char buf[4];
        std::memcpy(buf, &nan, 4);
        f.write(buf, 4);
    }
    std::string what;
    CHECK(kind_of([&] { load_checkpoint(dir.path / "model.json", books); }, &what) == ErrorKind::format);
    CHECK(what.find(last.name) != std::string::npos);
}
