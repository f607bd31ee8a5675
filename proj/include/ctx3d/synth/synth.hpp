#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctx3d/ct/manifest.hpp"
#include "ctx3d/ct/volume.hpp"

namespace ctx3d::synth {

/// Sphere lesions plus one-slice-thick disk confusers. On its centre slice a
/// sphere and a disk of equal radius look the same; only neighbouring slices
/// tell them apart.
struct SynthConfig {
  std::size_t nz = 20, ny = 96, nx = 96;
  ct::Spacing spacing{2.0, 0.8, 0.8};
  int num_lesions = 3;
  int num_confusers = 15;
  double radius_min_mm = 4.0;
  double radius_max_mm = 6.0;
  double background_hu = -50;
  double noise_std_hu = 15;
  double object_offset_hu = 120;
  // Put every confuser on some lesion's centre slice (round robin).
  bool confusers_on_key_slices = true;
  double margin_mm = 3.0;  // clearance to the image border and between objects
  int max_attempts = 5000;  // placement retries per object

  // Throws std::invalid_argument; radius_min must be >= 2 slice intervals.
  void validate() const;
};

struct SynthObject {
  bool sphere = true;
  double cz_mm = 0, cy_mm = 0, cx_mm = 0;  // physical centre; voxel (z,y,x) sits at (z*dz, y*dy, x*dx)
  double radius_mm = 0;
  int center_slice = 0;
};

struct SynthVolume {
  ct::Volume volume;
  std::vector<ct::Annotation> annotations;  // one box per sphere per intersected slice
  std::vector<SynthObject> objects;
  std::vector<int> key_slices;  // sphere centre slices, ascending, unique
};

// Deterministic in (cfg, seed). Throws std::runtime_error when objects cannot
// be placed within max_attempts.
SynthVolume generate_volume(const SynthConfig& cfg, std::uint64_t seed, std::string id);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

// floor(15%) to val and test each, the remainder to train; shuffled by seed.
DatasetSplit split_volumes(std::vector<std::string> ids, std::uint64_t seed);

struct SynthDataset {
  std::vector<SynthVolume> volumes;
  DatasetSplit split;
};

// Requires n_volumes >= 3. Volume i is seeded from (seed, i).
SynthDataset generate_dataset(const SynthConfig& cfg, int n_volumes, std::uint64_t seed);

// Writes volumes/<id>.ctvol, annotations.csv and train/val/test manifests
// (one row per key slice). Returns the written file paths.
std::vector<std::filesystem::path> write_dataset(const SynthDataset& ds, const std::filesystem::path& dir);

std::vector<ct::ManifestEntry> manifest_for(const SynthDataset& ds, const std::vector<std::string>& ids);

}  // namespace ctx3d::synth
