#include "guard/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "guard/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace guard {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'G', 'R', 'D', '1'};
}

const NamedTensor& TensorFile::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ParseError("tensor file: missing tensor '" + name + "'");
}

bool TensorFile::has_tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void save_tensor_file(const TensorFile& file, const std::string& path) {
  json header = {{"format_version", TensorFile::kFormatVersion},
                 {"kind", file.kind},
                 {"meta", file.meta}};
  json shapes = json::array();
  for (const auto& t : file.tensors) {
    if (t.data.size() != t.rows * t.cols) {
      throw InputError("tensor file: shape mismatch for '" + t.name + "'");
    }
    shapes.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  header["tensors"] = std::move(shapes);
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("tensor file: cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t header_len = static_cast<std::uint32_t>(header_bytes.size());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& t : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw InputError("tensor file: write failed for " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("tensor file: cannot open " + path);

  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("tensor file: bad magic in " + path);
  }
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw ParseError("tensor file: truncated header in " + path);

  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), header_len);
  if (!in) throw ParseError("tensor file: truncated header in " + path);

  json header = json::parse(header_bytes, nullptr, false);
  if (header.is_discarded()) throw ParseError("tensor file: malformed header in " + path);
  const auto version = header.at("format_version").get<std::uint32_t>();
  if (version != TensorFile::kFormatVersion) {
    throw ParseError("tensor file: unsupported format_version " + std::to_string(version) +
                     " in " + path);
  }

  TensorFile file;
  file.kind = header.at("kind").get<std::string>();
  file.meta = header.value("meta", json::object());
  for (const auto& shape : header.at("tensors")) {
    NamedTensor t;
    t.name = shape.at("name").get<std::string>();
    t.rows = shape.at("rows").get<std::size_t>();
    t.cols = shape.at("cols").get<std::size_t>();
    t.data.resize(t.rows * t.cols);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw ParseError("tensor file: truncated payload for '" + t.name + "' in " + path);
    file.tensors.push_back(std::move(t));
  }
  return file;
}

}  // namespace guard
