#include "ctx3d/nn/tensor_io.hpp"

#include <string_view>

#include "ctx3d/binary_io.hpp"

namespace ctx3d::nn {

std::string encode_tensor_file(const std::vector<NamedTensor>& tensors) {
  std::string out(kTensorFileMagic, sizeof(kTensorFileMagic));
  io::put_le<std::uint32_t>(out, kTensorFileVersion);
  for (const NamedTensor& t : tensors) {
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) io::put_le<std::uint64_t>(out, e);
    for (float v : t.value.data()) io::put_f32(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_tensor_file(const std::string& bytes) {
  io::Reader r(bytes, "tensor file");
  if (r.get_bytes(sizeof(kTensorFileMagic)) != std::string_view(kTensorFileMagic, sizeof(kTensorFileMagic))) {
    throw DataError("tensor file: bad magic");
  }
  const auto version = r.get_le<std::uint32_t>();
  if (version != kTensorFileVersion) {
    throw DataError("tensor file: unsupported version " + std::to_string(version));
  }
  std::vector<NamedTensor> out;
  while (!r.at_end()) {
    NamedTensor t;
    const auto name_len = r.get_le<std::uint32_t>();
    t.name = std::string(r.get_bytes(name_len));
    const auto rank = r.get_le<std::uint32_t>();
    if (rank == 0 || rank > 8) throw DataError("tensor file: bad rank for '" + t.name + "'");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& e : shape) {
      e = r.get_le<std::uint64_t>();
      if (e == 0) throw DataError("tensor file: zero extent for '" + t.name + "'");
      count *= e;
      if (count > r.remaining()) throw DataError("tensor file: truncated data for '" + t.name + "'");
    }
    std::vector<float> data(count);
    for (float& v : data) v = r.get_f32();
    t.value = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(t));
  }
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  io::write_file_atomic(path, encode_tensor_file(tensors));
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
  return decode_tensor_file(io::read_file(path));
}

}  // namespace ctx3d::nn
