#include "ctx3d/det/detection_io.hpp"

#include <algorithm>
#include <cmath>

#include "ctx3d/binary_io.hpp"
#include "ctx3d/csv.hpp"
#include "ctx3d/errors.hpp"

namespace ctx3d::det {

std::string format_detections(std::vector<Detection> dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.image != b.image) return a.image < b.image;
    return a.score > b.score;
  });
  std::string out = std::string(kDetectionHeader) + "\n";
  for (const auto& d : dets) {
    out += d.image.volume_id + "," + std::to_string(d.image.key_slice) + "," + csv::fmt(d.box.x1) + "," +
           csv::fmt(d.box.y1) + "," + csv::fmt(d.box.x2) + "," + csv::fmt(d.box.y2) + "," + csv::fmt(d.score) + "\n";
  }
  return out;
}

std::vector<Detection> parse_detections(const std::string& text, const std::string& what) {
  const auto t = csv::parse(text, what);
  csv::require_columns(t, {"volume_id", "key_slice", "x1", "y1", "x2", "y2", "score"}, what);
  const std::size_t cv = t.column("volume_id"), ck = t.column("key_slice"), c1 = t.column("x1"),
                    c2 = t.column("y1"), c3 = t.column("x2"), c4 = t.column("y2"), cs = t.column("score");
  std::vector<Detection> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    Detection d;
    d.image = ImageKey{r[cv], static_cast<int>(csv::to_int(r[ck], what))};
    d.box = Box{csv::to_double(r[c1], what), csv::to_double(r[c2], what), csv::to_double(r[c3], what),
                csv::to_double(r[c4], what)};
    d.score = csv::to_double(r[cs], what);
    if (!d.box.valid() || !std::isfinite(d.score)) {
      throw DataError(what + ": row " + std::to_string(i + 2) + " has an invalid box or score");
    }
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  return parse_detections(io::read_file(path), path.string());
}

}  // namespace ctx3d::det
