#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace duc {

// Single-file tensor container:
//   8 bytes  magic "DUCWGT01"
//   8 bytes  little-endian u64 manifest length
//   manifest JSON {"config": {...}, "tensors": [{"name", "shape", "dtype": "f32", "offset"}]}
//   payload  little-endian float32, offsets in elements from the payload start
struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
};

struct TensorFile {
  nlohmann::json config = nlohmann::json::object();
  std::vector<Tensor> tensors;

  // Throws DimensionError naming `source` when absent or mis-shaped.
  const Tensor& get(const std::string& name, const std::vector<std::int64_t>& shape) const;
  std::string source;  // path it was read from, for error messages
};

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

// Atomic write helper shared by all artifact writers: writes to path.tmp, then renames.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace duc
