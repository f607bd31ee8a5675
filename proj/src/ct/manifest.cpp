#include "ctx3d/ct/manifest.hpp"

#include "ctx3d/binary_io.hpp"
#include "ctx3d/csv.hpp"

namespace ctx3d::ct {

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& e : entries) {
    out += e.volume_id + "," + e.path + "," + std::to_string(e.key_slice) + "," + csv::fmt(e.slice_interval_mm) + "\n";
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  io::write_file_atomic(path, format_manifest(entries));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::string what = path.string();
  csv::require_columns(t, {"volume_id", "path", "key_slice"}, what);
  const std::size_t c_id = t.column("volume_id"), c_path = t.column("path"), c_k = t.column("key_slice");
  const bool has_interval = t.has_column("slice_interval_mm");
  const std::filesystem::path base = path.parent_path();
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = what + " row " + std::to_string(i + 1);
    ManifestEntry e;
    e.volume_id = row[c_id];
    std::filesystem::path p = row[c_path];
    e.path = (p.is_relative() ? base / p : p).string();
    e.key_slice = static_cast<int>(csv::to_int(row[c_k], where));
    if (has_interval) e.slice_interval_mm = csv::to_double(row[t.column("slice_interval_mm")], where);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace ctx3d::ct
