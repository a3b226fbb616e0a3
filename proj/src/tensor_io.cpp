#include "duc/tensor_io.hpp"

#include "duc/error.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace duc {

static_assert(std::endian::native == std::endian::little, "tensor container assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'U', 'C', 'W', 'G', 'T', '0', '1'};

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const Tensor& TensorFile::get(const std::string& name, const std::vector<std::int64_t>& shape) const {
  for (const auto& t : tensors) {
    if (t.name != name) continue;
    if (t.shape != shape)
      throw DimensionError(source + ": tensor " + name + " has shape " + shape_string(t.shape) + ", expected " +
                           shape_string(shape));
    return t;
  }
  throw DimensionError(source + ": missing tensor " + name);
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
  nlohmann::json manifest;
  manifest["config"] = file.config;
  manifest["tensors"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& t : file.tensors) {
    if (t.numel() != static_cast<std::int64_t>(t.data.size()))
      throw DimensionError("tensor " + t.name + " data size does not match shape " + shape_string(t.shape));
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = manifest.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : file.tensors)
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    if (!out) throw IoError("short write to " + path);
  }
  std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path + ": not a tensor container");
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) throw ParseError(path + ": manifest length exceeds file size");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(path + ": truncated manifest");

  TensorFile out;
  out.source = path;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
    out.config = manifest.at("config");
    const std::uint64_t payload_elems = (file_size - 16 - len) / 4;
    for (const auto& entry : manifest.at("tensors")) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      if (entry.at("dtype").get<std::string>() != "f32") throw ParseError(path + ": unsupported dtype in " + t.name);
      const auto offset = entry.at("offset").get<std::int64_t>();
      const auto n = t.numel();
      if (n < 0 || offset < 0 || static_cast<std::uint64_t>(offset + n) > payload_elems)
        throw ParseError(path + ": tensor " + t.name + " extends past the payload");
      t.data.resize(static_cast<std::size_t>(n));
      in.seekg(static_cast<std::streamoff>(16 + len + static_cast<std::uint64_t>(offset) * 4));
      in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
      if (!in) throw ParseError(path + ": truncated payload in " + t.name);
      out.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad manifest: " + e.what());
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace duc
