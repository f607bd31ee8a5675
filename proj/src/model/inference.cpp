#include "ctx3d/model/inference.hpp"

#include "ctx3d/model/dataset.hpp"

namespace ctx3d::model {

VolumeInference::VolumeInference(const Detector<float>& model, const ct::WindowedVolume& volume, bool use_cache)
    : model_(model), volume_(volume), use_cache_(use_cache) {}

std::vector<det::Detection> VolumeInference::detect(int key_slice) {
  const ct::SliceGroup group = sample_group(model_.config(), volume_, key_slice);
  const SampleInput<float> input = model_.make_input(group);
  const auto& s = input.images.shape();
  const std::size_t plane = 3 * s[2] * s[3];

  std::vector<nn::Tensor<float>> local;
  std::vector<const nn::Tensor<float>*> feats;
  local.reserve(s[0]);
  for (std::size_t m = 0; m < s[0]; ++m) {
    const std::array<int, 3> key{group.slice_indices[3 * m], group.slice_indices[3 * m + 1],
                                 group.slice_indices[3 * m + 2]};
    if (use_cache_) {
      if (auto it = cache_.find(key); it != cache_.end()) {
        feats.push_back(&it->second);
        continue;
      }
    }
    std::vector<float> buf(input.images.data().begin() + static_cast<long>(m * plane),
                           input.images.data().begin() + static_cast<long>((m + 1) * plane));
    nn::Tensor<float> f = model_.image_features(nn::Tensor<float>(nn::Shape{1, 3, s[2], s[3]}, std::move(buf)));
    ++backbone_runs_;
    if (use_cache_) {
      feats.push_back(&cache_.emplace(key, std::move(f)).first->second);
    } else {
      local.push_back(std::move(f));
      feats.push_back(&local.back());
    }
  }
  auto dets = model_.detect_from_features(feats, input.height, input.width);
  for (auto& d : dets) d.image = det::ImageKey{volume_.id, key_slice};
  return dets;
}

std::vector<det::Detection> VolumeInference::detect_all(std::span<const int> key_slices) {
  std::vector<det::Detection> out;
  for (int k : key_slices) {
    auto d = detect(k);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

}  // namespace ctx3d::model
