#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "ctx3d/ct/volume.hpp"
#include "ctx3d/det/box.hpp"
#include "ctx3d/model/detector.hpp"

namespace ctx3d::model {

/// Runs a detector over key slices of one windowed volume. With the cache on,
/// the Conv1-5 map of every three-slice image is computed once and reused by
/// neighbouring key slices; results are identical either way.
class VolumeInference {
 public:
  VolumeInference(const Detector<float>& model, const ct::WindowedVolume& volume, bool use_cache);

  // Detections for one key slice, tagged with the volume id and slice.
  std::vector<det::Detection> detect(int key_slice);
  std::vector<det::Detection> detect_all(std::span<const int> key_slices);

  std::size_t backbone_runs() const { return backbone_runs_; }
  std::size_t cache_size() const { return cache_.size(); }

 private:
  const Detector<float>& model_;
  const ct::WindowedVolume& volume_;
  bool use_cache_;
  std::map<std::array<int, 3>, nn::Tensor<float>> cache_;
  std::size_t backbone_runs_ = 0;
};

}  // namespace ctx3d::model
