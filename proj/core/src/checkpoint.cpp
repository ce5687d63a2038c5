#include "visor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "visor/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace visor::vlm {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'V', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error("checkpoint truncated: " + path.string());
  return v;
}

json spec_to_json(const ModelSpec& s) {
  return json{{"height", s.height},   {"width", s.width},
              {"patch_size", s.patch_size}, {"dim", s.dim},
              {"layers", s.layers},   {"vocab", s.vocab},
              {"heads", s.heads},     {"max_seq_len", s.max_seq_len}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.patch_size = j.at("patch_size").get<int>();
  s.dim = j.at("dim").get<int>();
  s.layers = j.at("layers").get<int>();
  s.vocab = j.at("vocab").get<int>();
  s.heads = j.at("heads").get<int>();
  s.max_seq_len = j.at("max_seq_len").get<int>();
  s.validate();
  return s;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  const std::string spec_json = spec_to_json(params.spec).dump();
  write_u32(out, static_cast<std::uint32_t>(spec_json.size()));
  out.write(spec_json.data(), static_cast<std::streamsize>(spec_json.size()));

  std::uint32_t count = 0;
  params.for_each_named([&count](const std::string&, const Tensor&) { ++count; });
  write_u32(out, count);

  params.for_each_named([&out](const std::string& name, const Tensor& t) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    for (std::int64_t i = 0; i < t.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t.at(i));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  });
  if (!out) throw Error("checkpoint write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error("not a TVLM checkpoint: " + path.string());
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  const std::uint32_t spec_len = read_u32(in, path);
  std::string spec_str(spec_len, '\0');
  in.read(spec_str.data(), spec_len);
  if (!in) throw Error("checkpoint truncated: " + path.string());
  json spec_json = json::parse(spec_str, nullptr, false);
  if (spec_json.is_discarded()) throw Error("checkpoint spec is not valid JSON: " + path.string());
  const ModelSpec spec = spec_from_json(spec_json);

  // Materialize the expected structure, then fill tensors in order.
  ModelParams params = ModelParams::init(spec, 0);
  const std::uint32_t count = read_u32(in, path);
  std::uint32_t expected = 0;
  params.for_each_named([&expected](const std::string&, const Tensor&) { ++expected; });
  if (count != expected) {
    throw Error("checkpoint tensor count " + std::to_string(count) + " != expected " +
                std::to_string(expected) + ": " + path.string());
  }

  params.for_each_named([&in, &path](const std::string& name, Tensor& t) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string stored(name_len, '\0');
    in.read(stored.data(), name_len);
    if (!in) throw Error("checkpoint truncated: " + path.string());
    if (stored != name) {
      throw Error("checkpoint tensor order mismatch: expected '" + name + "', found '" + stored +
                  "': " + path.string());
    }
    const std::uint32_t rank = read_u32(in, path);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_u32(in, path)));
    if (shape != t.shape()) {
      throw Error("checkpoint tensor '" + name + "' shape " + shape_str(shape) +
                  " != expected " + shape_str(t.shape()) + ": " + path.string());
    }
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw Error("checkpoint truncated: " + path.string());
    for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = buf[static_cast<std::size_t>(i)];
  });
  return params;
}

}  // namespace visor::vlm
