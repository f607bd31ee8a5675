#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>

#include "ctx3d/errors.hpp"

namespace ctx3d::io {

// Little-endian append helpers.
template <typename U>
void put_le(std::string& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_i16(std::string& out, std::int16_t v) { put_le(out, std::bit_cast<std::uint16_t>(v)); }

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename U>
  U get_le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  std::int16_t get_i16() { return std::bit_cast<std::int16_t>(get_le<std::uint16_t>()); }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace ctx3d::io
