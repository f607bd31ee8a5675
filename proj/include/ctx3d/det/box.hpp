#pragma once

#include <cmath>
#include <string>

namespace ctx3d::det {

/// Axis-aligned box in continuous pixel coordinates of the preprocessed image.
/// Pixel i spans [i, i+1); x2/y2 are exclusive edges, so width = x2 - x1.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return x1 + 0.5 * width(); }
  double cy() const { return y1 + 0.5 * height(); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 > x1 &&
           y2 > y1;
  }
  Box translated(double dx, double dy) const { return {x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }
  bool operator==(const Box&) const = default;
};

/// Identifies one evaluated image: a key slice of a volume.
struct ImageKey {
  std::string volume_id;
  int key_slice = 0;
  auto operator<=>(const ImageKey&) const = default;
};

/// A scored box on one image.
struct Detection {
  Box box;
  double score = 0;
  ImageKey image;
};

}  // namespace ctx3d::det
