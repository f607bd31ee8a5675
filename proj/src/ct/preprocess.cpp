#include "ctx3d/ct/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <type_traits>

#include "ctx3d/errors.hpp"

namespace ctx3d::ct {
namespace {

bool same_spacing(double a, double b) { return std::abs(a - b) <= kSpacingTolerance * std::max(1.0, b); }

template <typename V>
V cast_voxel(double v) {
  if constexpr (std::is_integral_v<V>) {
    const double r = std::nearbyint(v);
    return static_cast<V>(std::clamp(r, static_cast<double>(std::numeric_limits<V>::min()),
                                     static_cast<double>(std::numeric_limits<V>::max())));
  } else {
    return static_cast<V>(v);
  }
}

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1
};

// Pixel-center mapping: output centre (o + 0.5) * target lies at input
// continuous coordinate (o + 0.5) * target / spacing.
std::vector<Tap> axis_taps(std::size_t n_in, double spacing, double target, std::size_t& n_out) {
  if (same_spacing(spacing, target)) {
    n_out = n_in;
    std::vector<Tap> taps(n_in);
    for (std::size_t i = 0; i < n_in; ++i) taps[i] = {i, i, 0.0};
    return taps;
  }
  const double extent = static_cast<double>(n_in) * spacing / target;
  const long rounded = std::lround(extent);
  if (rounded < 1) throw std::invalid_argument("resample_inplane: output dimension rounds to 0");
  n_out = static_cast<std::size_t>(rounded);
  std::vector<Tap> taps(n_out);
  const double ratio = target / spacing;
  for (std::size_t o = 0; o < n_out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, s - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

double window_hu_value(double hu) {
  const double v = (hu - kWindowLowHu) * 255.0 / (kWindowHighHu - kWindowLowHu);
  return std::clamp(v, 0.0, 255.0);
}

WindowedVolume window_hu(const Volume& volume) {
  WindowedVolume out(volume.id, volume.nz, volume.ny, volume.nx, volume.spacing);
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    out.voxels[i] = static_cast<float>(window_hu_value(volume.voxels[i]));
  }
  return out;
}

template <typename V>
Volume3<V> resample_inplane(const Volume3<V>& volume, double target_spacing) {
  volume.validate();
  if (!(target_spacing > 0)) throw std::invalid_argument("resample_inplane: target spacing must be positive");
  std::size_t ny = 0, nx = 0;
  const auto ty = axis_taps(volume.ny, volume.spacing.dy, target_spacing, ny);
  const auto tx = axis_taps(volume.nx, volume.spacing.dx, target_spacing, nx);
  Volume3<V> out(volume.id, volume.nz, ny, nx, {volume.spacing.dz, target_spacing, target_spacing});
  for (std::size_t z = 0; z < volume.nz; ++z) {
    for (std::size_t y = 0; y < ny; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < nx; ++x) {
        const Tap& b = tx[x];
        if (a.w1 == 0.0 && b.w1 == 0.0) {
          out.at(z, y, x) = volume.at(z, a.i0, b.i0);
          continue;
        }
        const double top = (1 - b.w1) * volume.at(z, a.i0, b.i0) + b.w1 * volume.at(z, a.i0, b.i1);
        const double bot = (1 - b.w1) * volume.at(z, a.i1, b.i0) + b.w1 * volume.at(z, a.i1, b.i1);
        out.at(z, y, x) = cast_voxel<V>((1 - a.w1) * top + a.w1 * bot);
      }
    }
  }
  return out;
}

template <typename V>
Volume3<V> resample_z(const Volume3<V>& volume, double target_interval) {
  volume.validate();
  if (!(target_interval > 0)) throw std::invalid_argument("resample_z: target interval must be positive");
  const double dz = volume.spacing.dz;
  if (same_spacing(dz, target_interval) || volume.nz == 1) {
    Volume3<V> out = volume;
    out.spacing.dz = target_interval;
    return out;
  }
  const double extent = static_cast<double>(volume.nz - 1) * dz;
  const auto count = static_cast<std::size_t>(std::floor(extent / target_interval + 1e-9)) + 1;
  Volume3<V> out(volume.id, count, volume.ny, volume.nx, {target_interval, volume.spacing.dy, volume.spacing.dx});
  const std::size_t plane = volume.slice_size();
  for (std::size_t j = 0; j < count; ++j) {
    const double pos = static_cast<double>(j) * target_interval / dz;
    auto k0 = static_cast<std::size_t>(std::floor(pos + 1e-9));
    k0 = std::min(k0, volume.nz - 1);
    const double f = std::max(0.0, pos - static_cast<double>(k0));
    const V* a = volume.slice(k0);
    V* dst = out.slice(j);
    if (f < 1e-9 || k0 + 1 >= volume.nz) {
      std::copy_n(a, plane, dst);
      continue;
    }
    const V* b = volume.slice(k0 + 1);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = cast_voxel<V>((1 - f) * a[i] + f * b[i]);
  }
  return out;
}

CropRegion find_border_crop(const WindowedVolume& windowed, double threshold) {
  windowed.validate();
  std::vector<float> row_max(windowed.ny, -1.0f), col_max(windowed.nx, -1.0f);
  for (std::size_t z = 0; z < windowed.nz; ++z) {
    for (std::size_t y = 0; y < windowed.ny; ++y) {
      for (std::size_t x = 0; x < windowed.nx; ++x) {
        const float v = windowed.at(z, y, x);
        row_max[y] = std::max(row_max[y], v);
        col_max[x] = std::max(col_max[x], v);
      }
    }
  }
  auto bright = [threshold](float v) { return static_cast<double>(v) >= threshold; };
  const auto y_first = std::find_if(row_max.begin(), row_max.end(), bright);
  if (y_first == row_max.end()) throw DataError("clip_borders: volume '" + windowed.id + "' is entirely black");
  const auto y_last = std::find_if(row_max.rbegin(), row_max.rend(), bright);
  const auto x_first = std::find_if(col_max.begin(), col_max.end(), bright);
  const auto x_last = std::find_if(col_max.rbegin(), col_max.rend(), bright);
  CropRegion r;
  r.y0 = static_cast<std::size_t>(y_first - row_max.begin());
  r.y1 = windowed.ny - static_cast<std::size_t>(y_last - row_max.rbegin());
  r.x0 = static_cast<std::size_t>(x_first - col_max.begin());
  r.x1 = windowed.nx - static_cast<std::size_t>(x_last - col_max.rbegin());
  return r;
}

template <typename V>
Volume3<V> crop(const Volume3<V>& volume, const CropRegion& region) {
  if (region.y1 <= region.y0 || region.x1 <= region.x0 || region.y1 > volume.ny || region.x1 > volume.nx) {
    throw std::invalid_argument("crop: region outside volume");
  }
  Volume3<V> out(volume.id, volume.nz, region.y1 - region.y0, region.x1 - region.x0, volume.spacing);
  for (std::size_t z = 0; z < volume.nz; ++z) {
    for (std::size_t y = region.y0; y < region.y1; ++y) {
      std::copy_n(&volume.at(z, y, region.x0), out.nx, &out.at(z, y - region.y0, 0));
    }
  }
  return out;
}

ClipResult clip_borders(const WindowedVolume& windowed, double threshold) {
  ClipResult r;
  r.region = find_border_crop(windowed, threshold);
  r.volume = crop(windowed, r.region);
  return r;
}

det::Box BoxTransform::apply(const det::Box& b) const {
  return {b.x1 * scale_x - offset_x, b.y1 * scale_y - offset_y, b.x2 * scale_x - offset_x,
          b.y2 * scale_y - offset_y};
}

int BoxTransform::apply_slice(int key_slice) const {
  return static_cast<int>(std::lround(static_cast<double>(key_slice) * z_scale));
}

bool is_preprocessed_spacing(const Spacing& s) {
  return same_spacing(s.dy, kTargetPixelSpacing) && same_spacing(s.dx, kTargetPixelSpacing) &&
         same_spacing(s.dz, kTargetSliceInterval);
}

PreprocessResult preprocess(const Volume& raw, double border_threshold) {
  raw.validate();
  PreprocessResult res;
  res.transform.scale_x = same_spacing(raw.spacing.dx, kTargetPixelSpacing) ? 1.0 : raw.spacing.dx / kTargetPixelSpacing;
  res.transform.scale_y = same_spacing(raw.spacing.dy, kTargetPixelSpacing) ? 1.0 : raw.spacing.dy / kTargetPixelSpacing;
  res.transform.z_scale = same_spacing(raw.spacing.dz, kTargetSliceInterval) ? 1.0 : raw.spacing.dz / kTargetSliceInterval;
  Volume v = resample_z(resample_inplane(raw, kTargetPixelSpacing), kTargetSliceInterval);
  res.region = find_border_crop(window_hu(v), border_threshold);
  res.transform.offset_x = static_cast<double>(res.region.x0);
  res.transform.offset_y = static_cast<double>(res.region.y0);
  res.volume = crop(v, res.region);
  return res;
}

std::vector<int> group_slice_indices(int num_slices, int key_slice, int num_images) {
  if (num_images < 1 || num_images % 2 == 0) {
    throw std::invalid_argument("group_slices: M must be odd and >= 1, got " + std::to_string(num_images));
  }
  if (key_slice < 0 || key_slice >= num_slices) {
    throw std::invalid_argument("group_slices: key slice " + std::to_string(key_slice) + " outside volume of " +
                                std::to_string(num_slices) + " slices");
  }
  const int half = (3 * num_images - 1) / 2;
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(3 * num_images));
  for (int s = key_slice - half; s <= key_slice + half; ++s) idx.push_back(std::clamp(s, 0, num_slices - 1));
  return idx;
}

namespace {

void require_preprocessed(const WindowedVolume& volume) {
  volume.validate();
  if (!is_preprocessed_spacing(volume.spacing)) {
    throw std::invalid_argument("group_slices: volume '" + volume.id + "' is not at 0.8 mm / 2 mm spacing");
  }
}

SliceGroup pack(const WindowedVolume& volume, int key_slice, int num_images, std::vector<int> indices) {
  SliceGroup g;
  g.num_images = num_images;
  g.height = volume.ny;
  g.width = volume.nx;
  g.key_slice = key_slice;
  g.pixel_spacing = kTargetPixelSpacing;
  g.slice_interval = kTargetSliceInterval;
  const std::size_t plane = volume.slice_size();
  g.pixels.resize(indices.size() * plane);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(volume.slice(static_cast<std::size_t>(indices[i])), plane, g.pixels.data() + i * plane);
  }
  g.slice_indices = std::move(indices);
  return g;
}

}  // namespace

SliceGroup group_slices(const WindowedVolume& volume, int key_slice, int num_images) {
  require_preprocessed(volume);
  auto idx = group_slice_indices(static_cast<int>(volume.nz), key_slice, num_images);
  return pack(volume, key_slice, num_images, std::move(idx));
}

SliceGroup key_slice_group(const WindowedVolume& volume, int key_slice) {
  require_preprocessed(volume);
  if (key_slice < 0 || key_slice >= static_cast<int>(volume.nz)) {
    throw std::invalid_argument("key_slice_group: key slice outside volume");
  }
  return pack(volume, key_slice, 1, {key_slice, key_slice, key_slice});
}

template Volume3<std::int16_t> resample_inplane(const Volume3<std::int16_t>&, double);
template Volume3<float> resample_inplane(const Volume3<float>&, double);
template Volume3<std::int16_t> resample_z(const Volume3<std::int16_t>&, double);
template Volume3<float> resample_z(const Volume3<float>&, double);
template Volume3<std::int16_t> crop(const Volume3<std::int16_t>&, const CropRegion&);
template Volume3<float> crop(const Volume3<float>&, const CropRegion&);

}  // namespace ctx3d::ct
