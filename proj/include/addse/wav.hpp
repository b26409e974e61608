// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace addse {

struct Wave {
    std::vector<double> samples;  // in [-1, 1], full scale 32767
    std::uint32_t sample_rate = 16000;
};

// 16-bit PCM mono RIFF/WAVE only.
Wave wav_read(const std::filesystem::path& path);

// Samples are clipped to [-1, 1] and rounded to the nearest 16-bit level
// (scale 32767).
void wav_write(const std::filesystem::path& path, const std::vector<double>& samples, std::uint32_t sample_rate);

std::int16_t to_pcm16(double sample);
double from_pcm16(std::int16_t value);

}  // namespace addse
