#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace guard {

// Named row-major float32 tensor, the unit of model serialization.
struct NamedTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;  // rows * cols values
};

// Self-describing container: magic, little-endian u32 header length, JSON
// header, then the raw little-endian float32 payload of every tensor in
// header order. The header carries format_version, a kind tag, an arbitrary
// meta object, and the tensor shapes.
struct TensorFile {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

void save_tensor_file(const TensorFile& file, const std::string& path);
TensorFile load_tensor_file(const std::string& path);

}  // namespace guard
