#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ctx3d/det/box.hpp"

namespace ctx3d::det {

inline constexpr const char* kDetectionHeader = "volume_id,key_slice,x1,y1,x2,y2,score";

// Rows grouped by image (volume id, key slice), score descending within an
// image; ties keep input order.
std::string format_detections(std::vector<Detection> dets);
std::vector<Detection> parse_detections(const std::string& text, const std::string& what);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace ctx3d::det
