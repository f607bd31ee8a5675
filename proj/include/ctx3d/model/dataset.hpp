#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctx3d/ct/manifest.hpp"
#include "ctx3d/ct/preprocess.hpp"
#include "ctx3d/ct/volume.hpp"
#include "ctx3d/det/box.hpp"
#include "ctx3d/eval/froc.hpp"
#include "ctx3d/model/config.hpp"

namespace ctx3d::model {

/// One training/evaluation image: the slice group around a key slice and the
/// lesion boxes annotated on that slice.
struct Sample {
  det::ImageKey key;
  ct::SliceGroup group;
  std::vector<det::Box> gt_boxes;
};

// Reads a CTVOL file, brings it to the preprocessed grid and windows it.
ct::WindowedVolume load_windowed_volume(const std::filesystem::path& path);

// The input group the model expects for a key slice (honours key_slice_only).
ct::SliceGroup sample_group(const ModelConfig& cfg, const ct::WindowedVolume& volume, int key_slice);

// Annotations keyed by image.
std::map<det::ImageKey, std::vector<ct::Annotation>> index_annotations(const std::vector<ct::Annotation>& rows);

// Loads every manifest entry in order. Each volume file is read once.
std::vector<Sample> load_samples(const ModelConfig& cfg, const std::vector<ct::ManifestEntry>& manifest,
                                 const std::vector<ct::Annotation>& annotations);

// Ground truth over the manifest images (images without lesions included).
eval::GroundTruthSet ground_truth(const std::vector<ct::ManifestEntry>& manifest,
                                  const std::vector<ct::Annotation>& annotations);

}  // namespace ctx3d::model
