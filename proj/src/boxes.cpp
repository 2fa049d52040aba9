#include "slidemask/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slidemask {

namespace {
// exp() clamp for decoded sizes
const double kMaxLogScale = std::log(1000.0 / 16.0);
}  // namespace

std::array<float, 4> BoxCoder::encode(const Box& r, const Box& t) const {
  const double rh = r.height(), rw = r.width();
  const double rcy = r.y1 + 0.5 * rh, rcx = r.x1 + 0.5 * rw;
  const double th = t.height(), tw = t.width();
  const double tcy = t.y1 + 0.5 * th, tcx = t.x1 + 0.5 * tw;
  return {static_cast<float>(wy * (tcy - rcy) / rh), static_cast<float>(wx * (tcx - rcx) / rw),
          static_cast<float>(wh * std::log(th / rh)), static_cast<float>(ww * std::log(tw / rw))};
}

Box BoxCoder::decode(const Box& r, const float* d) const {
  const double rh = r.height(), rw = r.width();
  const double cy = r.y1 + 0.5 * rh + d[0] / wy * rh;
  const double cx = r.x1 + 0.5 * rw + d[1] / wx * rw;
  const double h = rh * std::exp(std::min(d[2] / wh, kMaxLogScale));
  const double w = rw * std::exp(std::min(d[3] / ww, kMaxLogScale));
  return {cy - 0.5 * h, cx - 0.5 * w, cy + 0.5 * h, cx + 0.5 * w};
}

std::vector<Box> make_anchors(int feat_h, int feat_w, int stride, const std::vector<double>& scales,
                              const std::vector<double>& ratios) {
  std::vector<std::pair<double, double>> shapes;  // (h, w)
  for (double s : scales)
    for (double r : ratios) shapes.emplace_back(s * std::sqrt(r), s / std::sqrt(r));
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_h) * feat_w * shapes.size());
  for (int y = 0; y < feat_h; ++y)
    for (int x = 0; x < feat_w; ++x) {
      const double cy = (y + 0.5) * stride, cx = (x + 0.5) * stride;
      for (const auto& [h, w] : shapes) anchors.push_back({cy - h / 2, cx - w / 2, cy + h / 2, cx + w / 2});
    }
  return anchors;
}

Box clip_box(const Box& b, double height, double width) {
  return {std::clamp(b.y1, 0.0, height), std::clamp(b.x1, 0.0, width), std::clamp(b.y2, 0.0, height),
          std::clamp(b.x2, 0.0, width)};
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<float>& scores, double iou_threshold,
                     int max_keep) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    if (max_keep >= 0 && static_cast<int>(keep.size()) >= max_keep) break;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!removed[b] && iou(boxes[a], boxes[b]) > iou_threshold) removed[b] = 1;
    }
  }
  return keep;
}

std::optional<Box> mask_box(const Mask& mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return std::nullopt;
  return Box{static_cast<double>(y0), static_cast<double>(x0), static_cast<double>(y1 + 1),
             static_cast<double>(x1 + 1)};
}

Box normalize_box(const Box& b, double height, double width) {
  return {b.y1 / height, b.x1 / width, b.y2 / height, b.x2 / width};
}

}  // namespace slidemask
