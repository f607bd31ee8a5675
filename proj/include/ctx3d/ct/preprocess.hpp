#pragma once

#include <cstddef>
#include <vector>

#include "ctx3d/ct/volume.hpp"
#include "ctx3d/det/box.hpp"

namespace ctx3d::ct {

inline constexpr double kWindowLowHu = -1024.0;
inline constexpr double kWindowHighHu = 3071.0;
inline constexpr double kDefaultBorderThreshold = 1.0;  // on the [0, 255] scale
// Spacing equality tolerance; CTVOL stores spacing as f32.
inline constexpr double kSpacingTolerance = 1e-5;

// (hu + 1024) * 255 / 4095 clamped to [0, 255].
double window_hu_value(double hu);
WindowedVolume window_hu(const Volume& volume);

// Bilinear in-plane resampling to `target_spacing` mm; output dims are
// round(dim * spacing / target). Identity when already at target.
template <typename V>
Volume3<V> resample_inplane(const Volume3<V>& volume, double target_spacing = kTargetPixelSpacing);

// Linear interpolation along z onto a `target_interval` grid starting at the
// first slice and spanning the original extent.
template <typename V>
Volume3<V> resample_z(const Volume3<V>& volume, double target_interval = kTargetSliceInterval);

/// Rows [y0, y1) and columns [x0, x1) kept after border clipping.
struct CropRegion {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
};

struct ClipResult {
  WindowedVolume volume;
  CropRegion region;
};

// Drops leading/trailing rows and columns whose maximum over the whole volume
// is below `threshold`. Throws DataError for an all-black volume.
CropRegion find_border_crop(const WindowedVolume& windowed, double threshold = kDefaultBorderThreshold);
ClipResult clip_borders(const WindowedVolume& windowed, double threshold = kDefaultBorderThreshold);

template <typename V>
Volume3<V> crop(const Volume3<V>& volume, const CropRegion& region);

/// Maps raw-volume pixel coordinates and slice indices into the preprocessed
/// frame: scale to 0.8 mm pixels, then shift by the crop offsets.
struct BoxTransform {
  double scale_x = 1, scale_y = 1;
  double offset_x = 0, offset_y = 0;  // subtracted after scaling
  double z_scale = 1;                 // source dz / 2 mm

  det::Box apply(const det::Box& b) const;
  int apply_slice(int key_slice) const;
};

struct PreprocessResult {
  Volume volume;  // HU at 0.8 mm x 0.8 mm x 2 mm, borders clipped
  BoxTransform transform;
  CropRegion region;
};

// Full chain: in-plane resample, z resample, border clipping. Idempotent on
// already preprocessed volumes.
PreprocessResult preprocess(const Volume& raw, double border_threshold = kDefaultBorderThreshold);

bool is_preprocessed_spacing(const Spacing& s);

/// 3M slices packed as M three-channel images around a key slice.
struct SliceGroup {
  int num_images = 1;
  std::size_t height = 0, width = 0;
  std::vector<float> pixels;  // [M, 3, H, W], values in [0, 255]
  int key_slice = 0;
  std::vector<int> slice_indices;  // 3M source slices, z order, edge-replicated
  double pixel_spacing = kTargetPixelSpacing;
  double slice_interval = kTargetSliceInterval;

  // z extent represented by the group: 3M slices at slice_interval.
  double coverage_mm() const { return 3.0 * num_images * slice_interval; }
  const float* image(int m) const { return pixels.data() + static_cast<std::size_t>(m) * 3 * height * width; }
};

// Slice indices for a group: key - (3M-1)/2 ... key + (3M-1)/2, clamped to
// the volume. Out-of-volume context replicates the nearest edge slice.
std::vector<int> group_slice_indices(int num_slices, int key_slice, int num_images);

// M must be odd and >= 1; the volume must be at 0.8 mm / 2 mm spacing.
SliceGroup group_slices(const WindowedVolume& volume, int key_slice, int num_images);

// Single image holding the key slice in all three channels (no 3D context).
SliceGroup key_slice_group(const WindowedVolume& volume, int key_slice);

}  // namespace ctx3d::ct
