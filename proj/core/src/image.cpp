#include "visor/image.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "visor/error.hpp"

namespace visor {

Tensor Image::to_tensor() const {
  Tensor t({height, width, 3});
  for (std::size_t i = 0; i < data.size(); ++i) t.at(static_cast<std::int64_t>(i)) = data[i];
  return t;
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[2] != 3) {
    throw Error("image tensor must be [H,W,3], got " + shape_str(t.shape()));
  }
  Image img(t.shape()[0], t.shape()[1]);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<float>(t.at(static_cast<std::int64_t>(i)));
  }
  return img;
}

void validate_pixels(const Image& img, const char* context) {
  if (img.height <= 0 || img.width <= 0 ||
      img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw Error(std::string(context) + ": malformed image buffer");
  }
  for (float v : img.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(std::string(context) + ": pixel value " + std::to_string(v) +
                  " outside [0,1]");
    }
  }
}

Image noisy_grey_image(int height, int width, std::uint64_t seed, double noise_stddev,
                       double channel_shift) {
  Image img(height, width);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_stddev);
  const double grey = 128.0 / 255.0;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        double v = grey + (noise_stddev > 0.0 ? noise(rng) : 0.0);
        if (ch == 0) v += channel_shift;
        img.at(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace visor
