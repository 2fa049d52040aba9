#pragma once

#include <string>
#include <vector>

#include "slidemask/annotation.hpp"
#include "slidemask/raster.hpp"

namespace slidemask {

/// Axis-aligned box in pixel coordinates, (y1, x1) inclusive corner to (y2, x2).
struct Box {
  double y1 = 0, x1 = 0, y2 = 0, x2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union; zero when either box is empty.
inline double iou(const Box& a, const Box& b) {
  const double iy1 = a.y1 > b.y1 ? a.y1 : b.y1;
  const double ix1 = a.x1 > b.x1 ? a.x1 : b.x1;
  const double iy2 = a.y2 < b.y2 ? a.y2 : b.y2;
  const double ix2 = a.x2 < b.x2 ? a.x2 : b.x2;
  const double inter = (iy2 > iy1 && ix2 > ix1) ? (iy2 - iy1) * (ix2 - ix1) : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct Detection {
  Box bbox;
  Mask mask;  // image-sized, 0/1
  ClassLabel label = ClassLabel::landslide;
  double score = 0.0;  // final per-class confidence in [0,1]
};

enum class Verdict { landslide, non_landslide };

std::string_view verdict_name(Verdict v);
Verdict parse_verdict(std::string_view text);

struct ImageVerdict {
  std::string image_id;
  Verdict verdict = Verdict::non_landslide;
  double top_score = 0.0;  // best Landslide score, 0 when none
  std::vector<Detection> detections;
};

}  // namespace slidemask
