#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctx3d/nn/tensor.hpp"

namespace ctx3d::nn {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

inline constexpr char kTensorFileMagic[6] = {'C', 'T', 'X', '3', 'D', '\0'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

// Layout: magic "CTX3D\0", u32 version, then until EOF a sequence of
//   u32 name length, name bytes, u32 rank, rank x u64 extents, f32 values;
// every integer and float little-endian.
std::string encode_tensor_file(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensor_file(const std::string& bytes);

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
// Throws DataError on a missing, truncated or malformed file.
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

}  // namespace ctx3d::nn
