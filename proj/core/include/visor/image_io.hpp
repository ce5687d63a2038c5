#pragma once

#include <filesystem>

#include "visor/image.hpp"

namespace visor::eval {

enum class ImageFormat { kPpm8, kRaw32 };

// ppm8: binary PPM (P6, maxval 255), round-half-up quantization; round-trips
// each pixel within 1/510. raw32: "VIMG" header + little-endian 32-bit
// floats; round-trips bit-exactly.
void export_image(const Image& image, const std::filesystem::path& path, ImageFormat format);
Image import_image(const std::filesystem::path& path, ImageFormat format);

// The quantization a deployed 8-bit image file applies.
Image ppm8_roundtrip(const Image& image);

}  // namespace visor::eval
