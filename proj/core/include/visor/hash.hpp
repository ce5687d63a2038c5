#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace visor {

// FNV-1a 64-bit; used for artifact fingerprints in manifests and reports.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::string hash_hex(std::uint64_t h);
std::string hash_bytes_hex(const std::string& bytes);
std::string hash_file_hex(const std::filesystem::path& path);

// Splitmix64-style stream derivation for per-item RNG seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace visor
