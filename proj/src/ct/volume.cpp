#include "ctx3d/ct/volume.hpp"

#include <cmath>
#include <stdexcept>

#include "ctx3d/binary_io.hpp"
#include "ctx3d/csv.hpp"

namespace ctx3d::ct {

template <typename V>
void Volume3<V>::validate() const {
  if (nz < 1 || ny < 1 || nx < 1) throw std::invalid_argument("volume '" + id + "': every dimension must be >= 1");
  if (!(spacing.dz > 0 && spacing.dy > 0 && spacing.dx > 0) || !std::isfinite(spacing.dz) ||
      !std::isfinite(spacing.dy) || !std::isfinite(spacing.dx)) {
    throw std::invalid_argument("volume '" + id + "': spacing must be positive and finite");
  }
  if (voxels.size() != nz * ny * nx) throw std::invalid_argument("volume '" + id + "': voxel count mismatch");
}

template struct Volume3<std::int16_t>;
template struct Volume3<float>;

std::string encode_volume(const Volume& v) {
  v.validate();
  std::string out(kVolumeMagic, sizeof(kVolumeMagic));
  io::put_le<std::uint32_t>(out, kVolumeVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.nz));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.ny));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.nx));
  io::put_f32(out, static_cast<float>(v.spacing.dz));
  io::put_f32(out, static_cast<float>(v.spacing.dy));
  io::put_f32(out, static_cast<float>(v.spacing.dx));
  out.reserve(out.size() + 2 * v.voxels.size());
  for (std::int16_t hu : v.voxels) io::put_i16(out, hu);
  return out;
}

Volume decode_volume(const std::string& bytes, std::string id) {
  io::Reader r(bytes, "volume '" + id + "'");
  if (r.get_bytes(sizeof(kVolumeMagic)) != std::string_view(kVolumeMagic, sizeof(kVolumeMagic))) {
    throw DataError("volume '" + id + "': bad magic");
  }
  const auto version = r.get_le<std::uint32_t>();
  if (version != kVolumeVersion) throw DataError("volume '" + id + "': unsupported version " + std::to_string(version));
  Volume v;
  v.id = std::move(id);
  v.nz = r.get_le<std::uint32_t>();
  v.ny = r.get_le<std::uint32_t>();
  v.nx = r.get_le<std::uint32_t>();
  // Spacing is stored as f32; keep the f32 value widened to double.
  v.spacing.dz = r.get_f32();
  v.spacing.dy = r.get_f32();
  v.spacing.dx = r.get_f32();
  const std::size_t count = v.nz * v.ny * v.nx;
  if (count == 0 || r.remaining() != 2 * count) {
    throw DataError("volume '" + v.id + "': expected " + std::to_string(count) + " voxels, file holds " +
                    std::to_string(r.remaining() / 2));
  }
  v.voxels.resize(count);
  for (auto& hu : v.voxels) hu = r.get_i16();
  try {
    v.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return v;
}

void write_volume(const std::filesystem::path& path, const Volume& v) { io::write_file_atomic(path, encode_volume(v)); }

Volume read_volume(const std::filesystem::path& path) {
  return decode_volume(io::read_file(path), path.stem().string());
}

std::string format_annotations(const std::vector<Annotation>& rows) {
  std::string out = std::string(kAnnotationHeader) + "\n";
  for (const Annotation& a : rows) {
    out += a.volume_id + "," + std::to_string(a.key_slice) + "," + csv::fmt(a.box.x1) + "," + csv::fmt(a.box.y1) +
           "," + csv::fmt(a.box.x2) + "," + csv::fmt(a.box.y2) + "," + std::to_string(a.type) + "," +
           csv::fmt(a.diameter_mm) + "\n";
  }
  return out;
}

std::vector<Annotation> parse_annotations(const std::string& text, const std::string& what) {
  const csv::Table t = csv::parse(text, what);
  csv::require_columns(t, {"volume_id", "key_slice", "x1", "y1", "x2", "y2", "type", "diameter_mm"}, what);
  const std::size_t c_id = t.column("volume_id"), c_k = t.column("key_slice"), c_x1 = t.column("x1"),
                    c_y1 = t.column("y1"), c_x2 = t.column("x2"), c_y2 = t.column("y2"), c_t = t.column("type"),
                    c_d = t.column("diameter_mm");
  std::vector<Annotation> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = what + " row " + std::to_string(i + 1);
    Annotation a;
    a.volume_id = row[c_id];
    a.key_slice = static_cast<int>(csv::to_int(row[c_k], where));
    a.box = {csv::to_double(row[c_x1], where), csv::to_double(row[c_y1], where), csv::to_double(row[c_x2], where),
             csv::to_double(row[c_y2], where)};
    a.type = static_cast<int>(csv::to_int(row[c_t], where));
    a.diameter_mm = csv::to_double(row[c_d], where);
    if (a.volume_id.empty()) throw DataError(where + ": empty volume_id");
    if (!a.box.valid()) throw DataError(where + ": box must satisfy x2 > x1 and y2 > y1");
    if (a.type < 0 || a.type >= 8) throw DataError(where + ": type must be in [0, 8)");
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(const std::filesystem::path& path, const std::vector<Annotation>& rows) {
  io::write_file_atomic(path, format_annotations(rows));
}

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
  return parse_annotations(io::read_file(path), path.string());
}

}  // namespace ctx3d::ct
