#include "visor/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "visor/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw32 writer assumes a little-endian host");

namespace visor::eval {

namespace {

constexpr char kRawMagic[4] = {'V', 'I', 'M', 'G'};
constexpr std::uint32_t kRawVersion = 1;

unsigned char quantize8(float v) {
  return static_cast<unsigned char>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error("image file truncated: " + path.string());
  return v;
}

}  // namespace

void export_image(const Image& image, const std::filesystem::path& path, ImageFormat format) {
  validate_pixels(image, "export_image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open image for writing: " + path.string());
  if (format == ImageFormat::kPpm8) {
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.data.size());
    for (std::size_t i = 0; i < image.data.size(); ++i) bytes[i] = quantize8(image.data[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  } else {
    out.write(kRawMagic, 4);
    write_u32(out, kRawVersion);
    write_u32(out, static_cast<std::uint32_t>(image.height));
    write_u32(out, static_cast<std::uint32_t>(image.width));
    write_u32(out, 3);
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size() * sizeof(float)));
  }
  if (!out) throw Error("image write failed: " + path.string());
}

Image import_image(const std::filesystem::path& path, ImageFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image: " + path.string());
  if (format == ImageFormat::kPpm8) {
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (!in || magic != "P6" || maxval != 255 || w <= 0 || h <= 0) {
      throw Error("not a maxval-255 P6 PPM: " + path.string());
    }
    in.get();  // single whitespace after header
    Image img(h, w);
    std::vector<unsigned char> bytes(img.data.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw Error("image file truncated: " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    return img;
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kRawMagic, 4) != 0) {
    throw Error("not a raw32 image file: " + path.string());
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kRawVersion) throw Error("unsupported raw32 version: " + path.string());
  const std::uint32_t h = read_u32(in, path);
  const std::uint32_t w = read_u32(in, path);
  const std::uint32_t c = read_u32(in, path);
  if (c != 3 || h == 0 || w == 0) throw Error("malformed raw32 header: " + path.string());
  Image img(static_cast<int>(h), static_cast<int>(w));
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!in) throw Error("image file truncated: " + path.string());
  return img;
}

Image ppm8_roundtrip(const Image& image) {
  validate_pixels(image, "ppm8_roundtrip");
  Image out = image;
  for (float& v : out.data) v = static_cast<float>(quantize8(v)) / 255.0f;
  return out;
}

}  // namespace visor::eval
