#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "slidemask/detection.hpp"
#include "slidemask/model.hpp"

namespace slidemask {

inline constexpr double kDefaultScoreThreshold = 0.8;

/// Detections with score >= threshold in input-image pixels, sorted by
/// (score desc, box area desc, label name). Safe to call concurrently.
std::vector<Detection> detect(const ModelHandle& model, const Image& image,
                              double threshold = kDefaultScoreThreshold);

/// Converts raw network output for a model-sized input back to an image of
/// width x height; masks are pasted into their boxes and binarized.
std::vector<Detection> to_detections(const std::vector<RawDetection>& raw, int model_side, int width, int height,
                                     int num_foreground_classes, double mask_threshold = 0.5);

void sort_detections(std::vector<Detection>& detections);
std::vector<Detection> filter_detections(const std::vector<Detection>& detections, double threshold);

/// Landslide iff a Landslide detection scores >= threshold.
ImageVerdict classify_image(const std::vector<Detection>& detections, double threshold = kDefaultScoreThreshold,
                            const std::string& image_id = "");

/// Translucent masks, boxes and "<class> <score%>" captions for detections at
/// or above min_score. Instance i takes palette color i.
Image render_overlay(const Image& image, const std::vector<Detection>& detections,
                     double min_score = kDefaultScoreThreshold);

struct Color {
  std::uint8_t r, g, b;
  friend bool operator==(const Color&, const Color&) = default;
};
const std::vector<Color>& overlay_palette();

double mask_iou(const Mask& a, const Mask& b);

/// Row-major run lengths, starting with a (possibly empty) run of zeros.
std::vector<std::uint32_t> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::uint32_t>& counts, int width, int height);

nlohmann::ordered_json verdict_to_json(const ImageVerdict& verdict, double threshold, int width, int height);
ImageVerdict verdict_from_json(const nlohmann::json& doc);

}  // namespace slidemask
