#pragma once

#include <vector>

#include "slidemask/detection.hpp"
#include "slidemask/raster.hpp"
#include "slidemask/tensor.hpp"

namespace slidemask {

using FeatureGrid = Raster<float>;

// Boxes are normalized (y1, x1, y2, x2) in [0,1] over the feature map extent.
// Feature cell (r, c) covers [r, r+1) x [c, c+1) with its value at the center;
// between centers the map is bilinear, beyond the outer centers it is clamped.
// Each bin averages a regular g x g grid of samples, g*g = samples_per_bin.

/// H x W x C grid to out_h x out_w x C grid for one box.
FeatureGrid roi_align(const FeatureGrid& feature, const Box& box, int out_h, int out_w, int samples_per_bin = 4);

/// feature [1,C,H,W] (or [C,H,W]) to [R, C, out_h, out_w].
Tensor roi_align(const Tensor& feature, const std::vector<Box>& boxes, int out_h, int out_w, int samples_per_bin = 4);

/// Accumulates dL/dfeature for the batched form. dfeature has the feature's shape.
void roi_align_backward(const Tensor& dy, const std::vector<Box>& boxes, int samples_per_bin, Tensor& dfeature);

}  // namespace slidemask
