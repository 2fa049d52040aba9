#include "slidemask/inference.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

namespace slidemask {

namespace {

double area_of(const Box& b) { return b.area(); }

// Bilinear sample of an s x s probability grid at continuous grid coordinates.
float sample_grid(const std::vector<float>& grid, int s, double u, double v) {
  u = std::clamp(u, 0.0, s - 1.0);
  v = std::clamp(v, 0.0, s - 1.0);
  const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
  const int x1 = std::min(x0 + 1, s - 1), y1 = std::min(y0 + 1, s - 1);
  const double tx = u - x0, ty = v - y0;
  auto at = [&](int y, int x) { return static_cast<double>(grid[static_cast<std::size_t>(y) * s + x]); };
  return static_cast<float>((1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
                            ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1)));
}

}  // namespace

void sort_detections(std::vector<Detection>& d) {
  std::stable_sort(d.begin(), d.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (area_of(a.bbox) != area_of(b.bbox)) return area_of(a.bbox) > area_of(b.bbox);
    return label_name(a.label) < label_name(b.label);
  });
}

std::vector<Detection> filter_detections(const std::vector<Detection>& detections, double threshold) {
  std::vector<Detection> out;
  for (const auto& d : detections)
    if (d.score >= threshold) out.push_back(d);
  sort_detections(out);
  return out;
}

std::vector<Detection> to_detections(const std::vector<RawDetection>& raw, int model_side, int width, int height,
                                     int num_foreground_classes, double mask_threshold) {
  const auto labels = foreground_labels(num_foreground_classes);
  const double sx = static_cast<double>(width) / model_side, sy = static_cast<double>(height) / model_side;
  std::vector<Detection> out;
  for (const auto& r : raw) {
    require(r.cls >= 1 && r.cls <= static_cast<int>(labels.size()), "raw detection class out of range");
    Detection d;
    d.label = labels[r.cls - 1];
    d.score = std::clamp(static_cast<double>(r.score), 0.0, 1.0);
    d.bbox = {std::clamp(r.box.y1 * sy, 0.0, static_cast<double>(height)),
              std::clamp(r.box.x1 * sx, 0.0, static_cast<double>(width)),
              std::clamp(r.box.y2 * sy, 0.0, static_cast<double>(height)),
              std::clamp(r.box.x2 * sx, 0.0, static_cast<double>(width))};
    d.mask = Mask(width, height, 1);
    const double bw = d.bbox.width(), bh = d.bbox.height();
    if (bw > 0 && bh > 0 && r.mask_side > 0) {
      const int s = r.mask_side;
      const int y0 = static_cast<int>(std::floor(d.bbox.y1)), y1 = static_cast<int>(std::ceil(d.bbox.y2));
      const int x0 = static_cast<int>(std::floor(d.bbox.x1)), x1 = static_cast<int>(std::ceil(d.bbox.x2));
      for (int y = y0; y < y1; ++y) {
        const double cy = y + 0.5;
        if (cy < d.bbox.y1 || cy >= d.bbox.y2) continue;
        const double v = (cy - d.bbox.y1) / bh * s - 0.5;
        for (int x = x0; x < x1; ++x) {
          const double cx = x + 0.5;
          if (cx < d.bbox.x1 || cx >= d.bbox.x2) continue;
          const double u = (cx - d.bbox.x1) / bw * s - 0.5;
          d.mask.at(x, y) = sample_grid(r.mask, s, u, v) >= mask_threshold ? 1 : 0;
        }
      }
    }
    out.push_back(std::move(d));
  }
  sort_detections(out);
  return out;
}

std::vector<Detection> detect(const ModelHandle& model, const Image& image, double threshold) {
  require(model != nullptr, "detect needs a built model");
  require(image.width() > 0 && image.height() > 0, "detect needs a non-empty image");
  const int side = model->config().model.image_size;
  const auto raw = model->predict(image_tensor(image, side));
  std::vector<RawDetection> kept;
  for (const auto& r : raw)
    if (r.score >= threshold) kept.push_back(r);
  return to_detections(kept, side, image.width(), image.height(), model->num_classes() - 1,
                       model->config().model.mask_threshold);
}

ImageVerdict classify_image(const std::vector<Detection>& detections, double threshold, const std::string& image_id) {
  ImageVerdict v;
  v.image_id = image_id;
  v.detections = filter_detections(detections, threshold);
  for (const auto& d : v.detections)
    if (d.label == ClassLabel::landslide) v.top_score = std::max(v.top_score, d.score);
  v.verdict = std::any_of(v.detections.begin(), v.detections.end(),
                          [](const Detection& d) { return d.label == ClassLabel::landslide; })
                  ? Verdict::landslide
                  : Verdict::non_landslide;
  return v;
}

const std::vector<Color>& overlay_palette() {
  static const std::vector<Color> palette = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                             {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
                                             {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {170, 110, 40}};
  return palette;
}

Image render_overlay(const Image& image, const std::vector<Detection>& detections, double min_score) {
  std::vector<const Detection*> shown;
  for (const auto& d : detections)
    if (d.score >= min_score) shown.push_back(&d);
  if (shown.empty()) return image;
  require(image.channels() == 3, "overlays need an RGB image");

  Image out = image;
  cv::Mat canvas(out.height(), out.width(), CV_8UC3, out.pixels().data());
  constexpr double alpha = 0.45;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const Detection& d = *shown[i];
    const Color c = overlay_palette()[i % overlay_palette().size()];
    if (d.mask.width() == out.width() && d.mask.height() == out.height())
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
          if (d.mask.at(x, y)) {
            const std::uint8_t rgb[3] = {c.r, c.g, c.b};
            for (int k = 0; k < 3; ++k)
              out.at(x, y, k) = static_cast<std::uint8_t>(std::lround((1 - alpha) * out.at(x, y, k) + alpha * rgb[k]));
          }
    const cv::Scalar color(c.r, c.g, c.b);
    const cv::Point p1(static_cast<int>(std::floor(d.bbox.x1)), static_cast<int>(std::floor(d.bbox.y1)));
    const cv::Point p2(std::max(p1.x, static_cast<int>(std::ceil(d.bbox.x2)) - 1),
                       std::max(p1.y, static_cast<int>(std::ceil(d.bbox.y2)) - 1));
    const int thickness = std::max(1, std::min(out.width(), out.height()) / 256);
    cv::rectangle(canvas, p1, p2, color, thickness);

    const std::string caption =
        std::string(label_name(d.label)) + " " + std::to_string(static_cast<int>(std::floor(d.score * 100))) + "%";
    const double scale = std::max(0.35, std::min(out.width(), out.height()) / 1024.0);
    int baseline = 0;
    const cv::Size ts = cv::getTextSize(caption, cv::FONT_HERSHEY_SIMPLEX, scale, 1, &baseline);
    const int ty = p1.y - ts.height - baseline - 2 >= 0 ? p1.y - baseline - 2 : p1.y + ts.height + 2;
    cv::rectangle(canvas, cv::Point(p1.x, ty - ts.height - 2), cv::Point(p1.x + ts.width + 2, ty + baseline),
                  color, cv::FILLED);
    cv::putText(canvas, caption, cv::Point(p1.x + 1, ty), cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(255, 255, 255),
                1, cv::LINE_AA);
  }
  return out;
}

double mask_iou(const Mask& a, const Mask& b) {
  require(a.width() == b.width() && a.height() == b.height(), "mask_iou needs equally sized masks");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.pixels()[i] != 0, y = b.pixels()[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<std::uint32_t> rle_encode(const Mask& mask) {
  std::vector<std::uint32_t> counts;
  bool current = false;
  std::uint32_t run = 0;
  for (auto v : mask.pixels()) {
    if ((v != 0) != current) {
      counts.push_back(run);
      run = 0;
      current = !current;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

Mask rle_decode(const std::vector<std::uint32_t>& counts, int width, int height) {
  Mask m(width, height, 1);
  std::size_t pos = 0;
  bool value = false;
  for (auto c : counts) {
    if (pos + c > m.size()) fail(ErrorKind::schema, "run-length mask overflows its frame");
    if (value) std::fill_n(m.pixels().begin() + static_cast<std::ptrdiff_t>(pos), c, std::uint8_t{1});
    pos += c;
    value = !value;
  }
  if (pos != m.size()) fail(ErrorKind::schema, "run-length mask does not cover its frame");
  return m;
}

nlohmann::ordered_json verdict_to_json(const ImageVerdict& v, double threshold, int width, int height) {
  nlohmann::ordered_json doc = {{"image_id", v.image_id},
                                {"verdict", std::string(verdict_name(v.verdict))},
                                {"top_score", v.top_score},
                                {"threshold", threshold},
                                {"width", width},
                                {"height", height},
                                {"detections", nlohmann::ordered_json::array()}};
  for (const auto& d : v.detections)
    doc["detections"].push_back({{"label", std::string(label_name(d.label))},
                                 {"score", d.score},
                                 {"bbox", {d.bbox.y1, d.bbox.x1, d.bbox.y2, d.bbox.x2}},
                                 {"mask", {{"size", {d.mask.height(), d.mask.width()}}, {"counts", rle_encode(d.mask)}}}});
  return doc;
}

ImageVerdict verdict_from_json(const nlohmann::json& doc) {
  try {
    ImageVerdict v;
    v.image_id = doc.at("image_id").get<std::string>();
    v.verdict = parse_verdict(doc.at("verdict").get<std::string>());
    v.top_score = doc.at("top_score").get<double>();
    for (const auto& d : doc.at("detections")) {
      Detection det;
      det.label = parse_label(d.at("label").get<std::string>());
      det.score = d.at("score").get<double>();
      const auto b = d.at("bbox").get<std::vector<double>>();
      if (b.size() != 4) fail(ErrorKind::schema, "bbox needs four numbers");
      det.bbox = {b[0], b[1], b[2], b[3]};
      const auto size = d.at("mask").at("size").get<std::vector<int>>();
      if (size.size() != 2) fail(ErrorKind::schema, "mask size needs two numbers");
      det.mask = rle_decode(d.at("mask").at("counts").get<std::vector<std::uint32_t>>(), size[1], size[0]);
      v.detections.push_back(std::move(det));
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, std::string("detection dump: ") + e.what());
  }
}

}  // namespace slidemask
