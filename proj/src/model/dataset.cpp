#include "ctx3d/model/dataset.hpp"

#include "ctx3d/errors.hpp"

namespace ctx3d::model {

ct::WindowedVolume load_windowed_volume(const std::filesystem::path& path) {
  const ct::Volume raw = ct::read_volume(path);
  if (ct::is_preprocessed_spacing(raw.spacing)) return ct::window_hu(raw);
  return ct::window_hu(ct::preprocess(raw).volume);
}

ct::SliceGroup sample_group(const ModelConfig& cfg, const ct::WindowedVolume& volume, int key_slice) {
  if (cfg.key_slice_only) return ct::key_slice_group(volume, key_slice);
  return ct::group_slices(volume, key_slice, cfg.num_images);
}

std::map<det::ImageKey, std::vector<ct::Annotation>> index_annotations(const std::vector<ct::Annotation>& rows) {
  std::map<det::ImageKey, std::vector<ct::Annotation>> out;
  for (const auto& a : rows) out[det::ImageKey{a.volume_id, a.key_slice}].push_back(a);
  return out;
}

std::vector<Sample> load_samples(const ModelConfig& cfg, const std::vector<ct::ManifestEntry>& manifest,
                                 const std::vector<ct::Annotation>& annotations) {
  const auto by_image = index_annotations(annotations);
  std::map<std::string, ct::WindowedVolume> volumes;
  std::vector<Sample> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) {
    auto it = volumes.find(e.path);
    if (it == volumes.end()) it = volumes.emplace(e.path, load_windowed_volume(e.path)).first;
    if (e.key_slice < 0 || static_cast<std::size_t>(e.key_slice) >= it->second.nz) {
      throw DataError("manifest: key slice " + std::to_string(e.key_slice) + " is outside volume '" + e.volume_id +
                      "' (" + std::to_string(it->second.nz) + " slices after preprocessing)");
    }
    Sample s;
    s.key = det::ImageKey{e.volume_id, e.key_slice};
    s.group = sample_group(cfg, it->second, e.key_slice);
    if (auto a = by_image.find(s.key); a != by_image.end()) {
      for (const auto& ann : a->second) s.gt_boxes.push_back(ann.box);
    }
    out.push_back(std::move(s));
  }
  return out;
}

eval::GroundTruthSet ground_truth(const std::vector<ct::ManifestEntry>& manifest,
                                  const std::vector<ct::Annotation>& annotations) {
  const auto by_image = index_annotations(annotations);
  eval::GroundTruthSet gts;
  for (const auto& e : manifest) {
    const det::ImageKey key{e.volume_id, e.key_slice};
    auto& lesions = gts.images[key];
    if (!lesions.empty()) continue;
    if (auto a = by_image.find(key); a != by_image.end()) {
      for (const auto& ann : a->second) {
        lesions.push_back(eval::GtLesion{ann.box, ann.type, ann.diameter_mm, e.slice_interval_mm});
      }
    }
  }
  return gts;
}

}  // namespace ctx3d::model
