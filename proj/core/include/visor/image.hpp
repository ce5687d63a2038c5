#pragma once

#include <cstdint>
#include <vector>

#include "visor/tensor.hpp"

namespace visor {

// H x W x 3 pixel grid, values in [0,1], stored as 32-bit floats (the unit
// every image file format here round-trips exactly).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // row-major, 3 channels interleaved

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  std::size_t size() const { return data.size(); }
  float& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + static_cast<std::size_t>(ch)];
  }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * 3 + static_cast<std::size_t>(ch)];
  }

  bool operator==(const Image& other) const {
    return height == other.height && width == other.width && data == other.data;
  }

  Tensor to_tensor() const;                 // [H,W,3] doubles
  static Image from_tensor(const Tensor& t);  // rounds to float, no clamping
};

// Throws if any pixel is outside [0,1] or non-finite.
void validate_pixels(const Image& img, const char* context);

// Mid-grey image with i.i.d. gaussian noise of the given stddev added to every
// channel value, then clamped to [0,1]. `channel_shift` is added to the red
// channel before clamping (0 for the plain baseline).
Image noisy_grey_image(int height, int width, std::uint64_t seed, double noise_stddev,
                       double channel_shift);

}  // namespace visor
