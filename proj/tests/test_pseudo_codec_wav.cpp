// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "addse/error.hpp"
#include "addse/pseudo_codec.hpp"
#include "addse/rng.hpp"
#include "addse/wav.hpp"

using namespace addse;

namespace {

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::usage;  // sentinel: nothing thrown
}

}  // namespace

TEST_CASE("DCT basis is orthonormal") {
    PseudoCodec codec({64, 16, 16000});
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> b(codec.basis().data(), 64,
                                                                                                16);
    const Eigen::MatrixXd g = b.transpose() * b;
    CHECK((g - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("analyze is the least-squares projection per frame") {
    PseudoCodec codec({40, 12, 8000});
    Rng rng(1);
    std::vector<double> wave(120);
    for (double& v : wave) {
        v = rng.normal();
    }
    const auto lat = codec.analyze(wave);
    REQUIRE(lat.frames == 3);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> b(codec.basis().data(), 40,
                                                                                                12);
    const Eigen::MatrixXd bm = b;
    for (std::size_t i = 0; i < 3; ++i) {
        const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(wave.data() + i * 40, 40);
        const Eigen::VectorXd ls = bm.colPivHouseholderQr().solve(x);
        for (std::size_t k = 0; k < 12; ++k) {
            CHECK(std::abs(lat.frame(i)[k] - ls(static_cast<Eigen::Index>(k))) < 1e-10);
        }
    }
}

TEST_CASE("signals in the retained span are reconstructed exactly") {
    PseudoCodec codec({32, 8, 16000});
    Rng rng(2);
    LatentSeq lat(5, 8);
    for (double& v : lat.values) {
        v = rng.normal();
    }
    const auto wave = codec.synthesize(lat);
    const auto back = codec.analyze(wave);
    for (std::size_t i = 0; i < lat.values.size(); ++i) {
        CHECK(std::abs(back.values[i] - lat.values[i]) < 1e-12);
    }
}

TEST_CASE("short tail is zero padded") {
    PseudoCodec codec({32, 8, 16000});
    std::vector<double> wave(40, 0.25);
    const auto lat = codec.analyze(wave);
    CHECK(lat.frames == 2);
    std::vector<double> padded(64, 0.0);
    std::fill(padded.begin(), padded.begin() + 40, 0.25);
    const auto ref = codec.analyze(padded);
    CHECK(lat.values == ref.values);
    std::vector<double> tiny(5, 0.1);
    CHECK(codec.analyze(tiny).frames == 1);
}

TEST_CASE("invalid codec configurations") {
    CHECK(kind_of([] { PseudoCodec({8, 9, 16000}); }) == ErrorKind::config);
    PseudoCodec codec({8, 4, 16000});
    CHECK(kind_of([&] { codec.analyze(std::vector<double>{}); }) == ErrorKind::invalid_input);
    CHECK(kind_of([&] { codec.synthesize(LatentSeq(1, 3)); }) == ErrorKind::config);
}

TEST_CASE("pcm16 quantization") {
    CHECK(to_pcm16(1.0) == 32767);
    CHECK(to_pcm16(-1.0) == -32767);
    CHECK(to_pcm16(3.0) == 32767);
    CHECK(to_pcm16(-3.0) == -32767);
    CHECK(to_pcm16(0.5 / 32767.0) == 1);  // rounds half away from zero
    for (int v = -32767; v <= 32767; v += 997) {
        CHECK(to_pcm16(from_pcm16(static_cast<std::int16_t>(v))) == v);
    }
}

TEST_CASE("wav round trip and header layout") {
    const auto path = tmp("addse_test_rt.wav");
    std::vector<double> s = {0.0, 0.5, -0.5, 1.0, -1.0, 0.123};
    wav_write(path, s, 22050);
    CHECK(std::filesystem::file_size(path) == 44 + 2 * s.size());
    const auto w = wav_read(path);
    CHECK(w.sample_rate == 22050);
    REQUIRE(w.samples.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(std::abs(w.samples[i] - s[i]) <= 0.5 / 32767.0 + 1e-15);
    }
    std::filesystem::remove(path);
}

TEST_CASE("malformed wav files are format errors") {
    const auto path = tmp("addse_test_bad.wav");
    wav_write(path, {0.1, 0.2}, 16000);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary);
        out << b;
    };
    auto stereo = bytes;
    stereo[22] = 2;
    write(stereo);
    CHECK(kind_of([&] { wav_read(path); }) == ErrorKind::format);
    auto eight_bit = bytes;
    eight_bit[34] = 8;
    write(eight_bit);
    CHECK(kind_of([&] { wav_read(path); }) == ErrorKind::format);
    write(bytes.substr(0, bytes.size() - 1));
    CHECK(kind_of([&] { wav_read(path); }) == ErrorKind::format);
    write("RIFX");
    CHECK(kind_of([&] { wav_read(path); }) == ErrorKind::format);
    std::filesystem::remove(path);
    CHECK(kind_of([&] { wav_read(path); }) == ErrorKind::io);
}
