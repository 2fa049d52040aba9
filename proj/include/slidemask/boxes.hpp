#pragma once

#include <array>
#include <optional>
#include <vector>

#include "slidemask/detection.hpp"

namespace slidemask {

/// Box regression deltas (dy, dx, dh, dw) relative to a reference box.
struct BoxCoder {
  double wy = 1.0, wx = 1.0, wh = 1.0, ww = 1.0;

  std::array<float, 4> encode(const Box& reference, const Box& target) const;
  Box decode(const Box& reference, const float* deltas) const;
};

/// Anchors for every feature cell, index (y * width + x) * A + a, centered on
/// ((x + 0.5) * stride, (y + 0.5) * stride). Ratio is height / width.
std::vector<Box> make_anchors(int feat_h, int feat_w, int stride, const std::vector<double>& scales,
                              const std::vector<double>& ratios);

Box clip_box(const Box& box, double height, double width);

/// Greedy non-maximum suppression. Returns kept indices by descending score
/// (ties by index); at most max_keep when max_keep >= 0.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores, double iou_threshold,
                     int max_keep = -1);

/// Tight box around the set pixels, or nothing for an empty mask.
std::optional<Box> mask_box(const Mask& mask);

/// Pixel box to coordinates normalized by the image extent.
Box normalize_box(const Box& box, double height, double width);

}  // namespace slidemask
