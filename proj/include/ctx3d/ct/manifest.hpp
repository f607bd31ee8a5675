#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ctx3d::ct {

/// One evaluated/trained image: a key slice of a preprocessed volume file.
struct ManifestEntry {
  std::string volume_id;
  std::string path;  // relative paths resolve against the manifest's directory
  int key_slice = 0;
  double slice_interval_mm = 2.0;  // of the source scan, before resampling
};

inline constexpr const char* kManifestHeader = "volume_id,path,key_slice,slice_interval_mm";

std::string format_manifest(const std::vector<ManifestEntry>& entries);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
// Paths in the returned entries are resolved against the manifest directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace ctx3d::ct
