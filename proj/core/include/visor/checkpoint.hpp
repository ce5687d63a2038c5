#pragma once

#include <filesystem>

#include "visor/model.hpp"

namespace visor::vlm {

// Binary checkpoint: magic "TVLM", u32 version, length-prefixed UTF-8 JSON
// ModelSpec, u32 tensor count, then per tensor (in ModelParams::for_each_named
// order): u32 name length, name bytes, u32 rank, u32 dims, little-endian
// 32-bit floats.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace visor::vlm
