#include "slidemask/roi_align.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace slidemask {

namespace {

struct Tap {
  int lo, hi;
  float wlo, whi;
};

int grid_side(int samples_per_bin) {
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(samples_per_bin))));
  require(samples_per_bin >= 1 && g * g == samples_per_bin,
          "samples_per_bin must be a positive square number, got " + std::to_string(samples_per_bin));
  return g;
}

void check_box(const Box& b) {
  require(std::isfinite(b.y1) && std::isfinite(b.x1) && std::isfinite(b.y2) && std::isfinite(b.x2),
          "roi box has non-finite coordinates");
  require(b.y1 < b.y2 && b.x1 < b.x2, "roi box has zero area");
  require(b.y1 >= 0 && b.x1 >= 0 && b.y2 <= 1 && b.x2 <= 1, "roi box lies outside [0,1]");
}

// Interpolation taps along one axis: out bins x g samples.
std::vector<Tap> axis_taps(double lo, double hi, int extent, int bins, int g) {
  std::vector<Tap> taps;
  taps.reserve(static_cast<std::size_t>(bins) * g);
  const double start = lo * extent, bin = (hi - lo) * extent / bins;
  for (int i = 0; i < bins; ++i)
    for (int s = 0; s < g; ++s) {
      double p = start + (i + (s + 0.5) / g) * bin - 0.5;
      p = std::clamp(p, 0.0, static_cast<double>(extent - 1));
      const int l = std::min(static_cast<int>(std::floor(p)), extent - 1);
      const int h = std::min(l + 1, extent - 1);
      const double f = p - l;
      taps.push_back({l, h, static_cast<float>(1.0 - f), static_cast<float>(f)});
    }
  return taps;
}

struct Geometry {
  int channels, height, width;
};

Geometry geometry_of(const Tensor& feature) {
  if (feature.rank() == 4) {
    require(feature.dim(0) == 1, "roi_align takes a single-image feature map");
    return {feature.dim(1), feature.dim(2), feature.dim(3)};
  }
  require(feature.rank() == 3, "roi_align expects [C,H,W] or [1,C,H,W]");
  return {feature.dim(0), feature.dim(1), feature.dim(2)};
}

// Visits (output index, feature index, weight) for one channel plane.
template <typename F>
void for_each_tap(const std::vector<Tap>& ty, const std::vector<Tap>& tx, int out_h, int out_w, int g, int width,
                  F&& f) {
  const float norm = 1.0f / static_cast<float>(g * g);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      const int o = i * out_w + j;
      for (int sy = 0; sy < g; ++sy) {
        const Tap& y = ty[static_cast<std::size_t>(i) * g + sy];
        for (int sx = 0; sx < g; ++sx) {
          const Tap& x = tx[static_cast<std::size_t>(j) * g + sx];
          f(o, y.lo * width + x.lo, y.wlo * x.wlo * norm);
          f(o, y.lo * width + x.hi, y.wlo * x.whi * norm);
          f(o, y.hi * width + x.lo, y.whi * x.wlo * norm);
          f(o, y.hi * width + x.hi, y.whi * x.whi * norm);
        }
      }
    }
}

}  // namespace

FeatureGrid roi_align(const FeatureGrid& feature, const Box& box, int out_h, int out_w, int samples_per_bin) {
  require(out_h >= 1 && out_w >= 1, "roi_align output size must be positive");
  require(!feature.empty(), "roi_align on an empty feature map");
  check_box(box);
  const int g = grid_side(samples_per_bin);
  const int h = feature.height(), w = feature.width(), c = feature.channels();
  const auto ty = axis_taps(box.y1, box.y2, h, out_h, g);
  const auto tx = axis_taps(box.x1, box.x2, w, out_w, g);
  FeatureGrid out(out_w, out_h, c, 0.0f);
  const float* src = feature.pixels().data();
  float* dst = out.pixels().data();
  for_each_tap(ty, tx, out_h, out_w, g, w, [&](int o, int idx, float wgt) {
    for (int k = 0; k < c; ++k) dst[static_cast<std::size_t>(o) * c + k] += wgt * src[static_cast<std::size_t>(idx) * c + k];
  });
  return out;
}

Tensor roi_align(const Tensor& feature, const std::vector<Box>& boxes, int out_h, int out_w, int samples_per_bin) {
  require(out_h >= 1 && out_w >= 1, "roi_align output size must be positive");
  const Geometry geo = geometry_of(feature);
  const int g = grid_side(samples_per_bin);
  const int n = static_cast<int>(boxes.size());
  Tensor out({n, geo.channels, out_h, out_w});
  const std::size_t plane = static_cast<std::size_t>(geo.height) * geo.width;
  const std::size_t oplane = static_cast<std::size_t>(out_h) * out_w;
  for (int r = 0; r < n; ++r) {
    check_box(boxes[r]);
    const auto ty = axis_taps(boxes[r].y1, boxes[r].y2, geo.height, out_h, g);
    const auto tx = axis_taps(boxes[r].x1, boxes[r].x2, geo.width, out_w, g);
    for (int c = 0; c < geo.channels; ++c) {
      const float* src = feature.data() + c * plane;
      float* dst = out.data() + (static_cast<std::size_t>(r) * geo.channels + c) * oplane;
      for_each_tap(ty, tx, out_h, out_w, g, geo.width, [&](int o, int idx, float wgt) { dst[o] += wgt * src[idx]; });
    }
  }
  return out;
}

void roi_align_backward(const Tensor& dy, const std::vector<Box>& boxes, int samples_per_bin, Tensor& dfeature) {
  const Geometry geo = geometry_of(dfeature);
  const int g = grid_side(samples_per_bin);
  require(dy.rank() == 4 && dy.dim(0) == static_cast<int>(boxes.size()) && dy.dim(1) == geo.channels,
          "roi_align backward: gradient shape mismatch");
  const int out_h = dy.dim(2), out_w = dy.dim(3);
  const std::size_t plane = static_cast<std::size_t>(geo.height) * geo.width;
  const std::size_t oplane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const auto ty = axis_taps(boxes[r].y1, boxes[r].y2, geo.height, out_h, g);
    const auto tx = axis_taps(boxes[r].x1, boxes[r].x2, geo.width, out_w, g);
    for (int c = 0; c < geo.channels; ++c) {
      float* dst = dfeature.data() + c * plane;
      const float* src = dy.data() + (r * geo.channels + c) * oplane;
      for_each_tap(ty, tx, out_h, out_w, g, geo.width, [&](int o, int idx, float wgt) { dst[idx] += wgt * src[o]; });
    }
  }
}

}  // namespace slidemask
