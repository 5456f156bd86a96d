#pragma once

#include <cstdint>
#include <string>

namespace morelab {

/// Axis-aligned box in pixel coordinates: columns [x, x+w), rows [y, y+h).
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  double center_x() const { return x + w / 2.0; }
  double center_y() const { return y + h / 2.0; }
  bool operator==(const BBox&) const = default;
};

std::string to_string(const BBox& box);

/// Throws GeometryError for zero-area boxes or boxes leaving the image.
void validate_bbox(const BBox& box, int image_width, int image_height);

}  // namespace morelab
