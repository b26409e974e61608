// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "addse/error.hpp"

namespace addse {
namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) {
        out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    }
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

std::int16_t to_pcm16(double sample) {
    const double clipped = std::clamp(sample, -1.0, 1.0);
    return static_cast<std::int16_t>(std::lround(clipped * 32767.0));
}

double from_pcm16(std::int16_t value) {
    return static_cast<double>(value) / 32767.0;
}

Wave wav_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";

    require(bytes.size() >= 12, ErrorKind::format, where + "file too short for a RIFF header");
    require(std::memcmp(bytes.data(), "RIFF", 4) == 0, ErrorKind::format, where + "RIFF tag missing");
    require(std::memcmp(bytes.data() + 8, "WAVE", 4) == 0, ErrorKind::format, where + "WAVE tag missing");
    const std::uint32_t riff_size = read_u32(bytes.data() + 4);
    require(riff_size == bytes.size() - 8, ErrorKind::format,
            where + "RIFF chunk size " + std::to_string(riff_size) + " does not match file size " +
                std::to_string(bytes.size()));

    Wave wave;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t size = read_u32(chunk + 4);
        require(pos + 8 + size <= bytes.size(), ErrorKind::format,
                where + "chunk '" + std::string(reinterpret_cast<const char*>(chunk), 4) + "' size " +
                    std::to_string(size) + " runs past end of file");
        const unsigned char* body = chunk + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            require(size >= 16, ErrorKind::format, where + "fmt chunk size " + std::to_string(size) + " < 16");
            const std::uint16_t audio_format = read_u16(body);
            const std::uint16_t channels = read_u16(body + 2);
            const std::uint16_t bits = read_u16(body + 14);
            require(audio_format == 1, ErrorKind::format,
                    where + "audio_format " + std::to_string(audio_format) + " is not PCM (1)");
            require(channels == 1, ErrorKind::format, where + "channels " + std::to_string(channels) + " is not mono");
            require(bits == 16, ErrorKind::format,
                    where + "bits_per_sample " + std::to_string(bits) + " is not 16");
            wave.sample_rate = read_u32(body + 4);
            require(wave.sample_rate > 0, ErrorKind::format, where + "sample_rate is 0");
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            require(have_fmt, ErrorKind::format, where + "data chunk before fmt chunk");
            require(size % 2 == 0, ErrorKind::format, where + "data chunk size " + std::to_string(size) + " is odd");
            wave.samples.resize(size / 2);
            for (std::size_t n = 0; n < wave.samples.size(); ++n) {
                wave.samples[n] = from_pcm16(static_cast<std::int16_t>(read_u16(body + 2 * n)));
            }
            return wave;
        }
        pos += 8 + size + (size & 1);
    }
    fail(ErrorKind::format, where + (have_fmt ? "data chunk missing" : "fmt chunk missing"));
}

void wav_write(const std::filesystem::path& path, const std::vector<double>& samples, std::uint32_t sample_rate) {
    const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    put_u32(out, 36 + data_bytes);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, sample_rate);
    put_u32(out, sample_rate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_bytes);
    for (double s : samples) {
        put_u16(out, static_cast<std::uint16_t>(to_pcm16(s)));
    }
    std::ofstream file(path, std::ios::binary);
    require(static_cast<bool>(file), ErrorKind::io, "cannot write " + path.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace addse
