// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "addse/rqdit.hpp"

namespace addse {

/// Checkpoint = JSON manifest at `manifest` plus a flat little-endian float32
/// payload next to it (same stem, ".bin"). The manifest records the model
/// config and, per tensor, {name, shape, offset} in float units. Parameters
/// are rounded to float32 on save, so load(save(m)) is exact for any model
/// that was itself loaded from a checkpoint.
void save_checkpoint(const std::filesystem::path& manifest, const RQDiT& model);

/// Rebuilds the model around `books`; throws config if K/D/H disagree,
/// naming both sides.
RQDiT load_checkpoint(const std::filesystem::path& manifest, CodebookSet books);

RQDiTConfig read_checkpoint_config(const std::filesystem::path& manifest);

}  // namespace addse
