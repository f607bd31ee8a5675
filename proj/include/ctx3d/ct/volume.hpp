#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctx3d/det/box.hpp"

namespace ctx3d::ct {

inline constexpr double kTargetPixelSpacing = 0.8;  // mm
inline constexpr double kTargetSliceInterval = 2.0;  // mm

struct Spacing {
  double dz = 1, dy = 1, dx = 1;  // mm
};

/// Voxel grid stored z-major (z, then y, then x).
template <typename V>
struct Volume3 {
  std::string id;
  std::size_t nz = 0, ny = 0, nx = 0;
  Spacing spacing;
  std::vector<V> voxels;

  Volume3() = default;
  Volume3(std::string vid, std::size_t z, std::size_t y, std::size_t x, Spacing sp, V fill = V{})
      : id(std::move(vid)), nz(z), ny(y), nx(x), spacing(sp), voxels(z * y * x, fill) {}

  std::size_t slice_size() const { return ny * nx; }
  V& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[(z * ny + y) * nx + x]; }
  const V& at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[(z * ny + y) * nx + x]; }
  const V* slice(std::size_t z) const { return voxels.data() + z * slice_size(); }
  V* slice(std::size_t z) { return voxels.data() + z * slice_size(); }

  // Throws std::invalid_argument on zero dims, bad spacing or size mismatch.
  void validate() const;
};

/// CT volume of Hounsfield units.
using Volume = Volume3<std::int16_t>;
/// Volume mapped to [0, 255] by window_hu.
using WindowedVolume = Volume3<float>;

// CTVOL file: magic "CTVOL\0", u32 version, u32 nz/ny/nx, f32 dz/dy/dx,
// then nz*ny*nx int16 HU values, z-major, all little-endian.
inline constexpr char kVolumeMagic[6] = {'C', 'T', 'V', 'O', 'L', '\0'};
inline constexpr std::uint32_t kVolumeVersion = 1;

std::string encode_volume(const Volume& v);
Volume decode_volume(const std::string& bytes, std::string id);
void write_volume(const std::filesystem::path& path, const Volume& v);
// The volume id is the file stem. Throws DataError on malformed input.
Volume read_volume(const std::filesystem::path& path);

/// One row of the annotation CSV.
struct Annotation {
  std::string volume_id;
  int key_slice = 0;
  det::Box box;
  int type = 0;  // lesion category in [0, 8)
  double diameter_mm = 0;
};

inline constexpr const char* kAnnotationHeader = "volume_id,key_slice,x1,y1,x2,y2,type,diameter_mm";

std::string format_annotations(const std::vector<Annotation>& rows);
std::vector<Annotation> parse_annotations(const std::string& text, const std::string& what);
void write_annotations(const std::filesystem::path& path, const std::vector<Annotation>& rows);
std::vector<Annotation> read_annotations(const std::filesystem::path& path);

}  // namespace ctx3d::ct
