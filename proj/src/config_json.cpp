#include "slidemask/config_json.hpp"

#include <set>

namespace slidemask {

namespace {

using json = nlohmann::json;

void check_keys(const json& doc, const std::set<std::string>& allowed, const std::string& where) {
  if (!doc.is_object()) fail(ErrorKind::config, where + " must be an object");
  for (const auto& [key, value] : doc.items())
    if (!allowed.count(key)) fail(ErrorKind::config, "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& doc, const char* key, T& out, const std::string& where) {
  const auto it = doc.find(key);
  if (it == doc.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string("field '") + key + "' in " + where + " has the wrong type");
  }
}

}  // namespace

nlohmann::ordered_json to_json(const AugmentationConfig& c) {
  return {{"horizontal_flip", c.horizontal_flip},
          {"rotation_range", c.rotation_range},
          {"shift_range", c.shift_range},
          {"zoom_range", c.zoom_range},
          {"fill_mode", c.fill_mode == FillMode::constant ? "constant" : "reflect"},
          {"fill_value", c.fill_value},
          {"seed", c.seed},
          {"copies", c.copies}};
}

AugmentationConfig augmentation_from_json(const json& doc, AugmentationConfig c) {
  const std::string where = "augmentation";
  check_keys(doc, {"horizontal_flip", "rotation_range", "shift_range", "zoom_range", "fill_mode", "fill_value", "seed",
                   "copies"},
             where);
  read(doc, "horizontal_flip", c.horizontal_flip, where);
  read(doc, "rotation_range", c.rotation_range, where);
  read(doc, "shift_range", c.shift_range, where);
  read(doc, "zoom_range", c.zoom_range, where);
  std::string fill;
  read(doc, "fill_mode", fill, where);
  if (fill == "constant") c.fill_mode = FillMode::constant;
  else if (fill == "reflect") c.fill_mode = FillMode::reflect;
  else if (!fill.empty()) fail(ErrorKind::config, "fill_mode must be constant or reflect, got '" + fill + "'");
  read(doc, "fill_value", c.fill_value, where);
  read(doc, "seed", c.seed, where);
  read(doc, "copies", c.copies, where);
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  return c;
}

nlohmann::ordered_json to_json(const ModelOptions& m) {
  return {{"image_size", m.image_size},
          {"backbone_width", m.backbone_width},
          {"neck_channels", m.neck_channels},
          {"anchor_scales", m.anchor_scales},
          {"anchor_ratios", m.anchor_ratios},
          {"rpn_channels", m.rpn_channels},
          {"rpn_batch", m.rpn_batch},
          {"rpn_positive_fraction", m.rpn_positive_fraction},
          {"rpn_positive_iou", m.rpn_positive_iou},
          {"rpn_negative_iou", m.rpn_negative_iou},
          {"rpn_pre_nms_train", m.rpn_pre_nms_train},
          {"rpn_post_nms_train", m.rpn_post_nms_train},
          {"rpn_pre_nms_test", m.rpn_pre_nms_test},
          {"rpn_post_nms_test", m.rpn_post_nms_test},
          {"rpn_nms", m.rpn_nms},
          {"rpn_score_threshold", m.rpn_score_threshold},
          {"roi_batch", m.roi_batch},
          {"roi_positive_fraction", m.roi_positive_fraction},
          {"roi_foreground_iou", m.roi_foreground_iou},
          {"box_pool", m.box_pool},
          {"mask_pool", m.mask_pool},
          {"samples_per_bin", m.samples_per_bin},
          {"box_hidden", m.box_hidden},
          {"mask_channels", m.mask_channels},
          {"mask_convs", m.mask_convs},
          {"box_score_threshold", m.box_score_threshold},
          {"box_nms", m.box_nms},
          {"detections_per_image", m.detections_per_image},
          {"mask_threshold", m.mask_threshold}};
}

ModelOptions model_options_from_json(const json& doc, ModelOptions m) {
  const std::string where = "model";
  std::set<std::string> keys;
  const auto defaults = to_json(m);
  for (const auto& [k, v] : defaults.items()) keys.insert(k);
  check_keys(doc, keys, where);
  read(doc, "image_size", m.image_size, where);
  read(doc, "backbone_width", m.backbone_width, where);
  read(doc, "neck_channels", m.neck_channels, where);
  read(doc, "anchor_scales", m.anchor_scales, where);
  read(doc, "anchor_ratios", m.anchor_ratios, where);
  read(doc, "rpn_channels", m.rpn_channels, where);
  read(doc, "rpn_batch", m.rpn_batch, where);
  read(doc, "rpn_positive_fraction", m.rpn_positive_fraction, where);
  read(doc, "rpn_positive_iou", m.rpn_positive_iou, where);
  read(doc, "rpn_negative_iou", m.rpn_negative_iou, where);
  read(doc, "rpn_pre_nms_train", m.rpn_pre_nms_train, where);
  read(doc, "rpn_post_nms_train", m.rpn_post_nms_train, where);
  read(doc, "rpn_pre_nms_test", m.rpn_pre_nms_test, where);
  read(doc, "rpn_post_nms_test", m.rpn_post_nms_test, where);
  read(doc, "rpn_nms", m.rpn_nms, where);
  read(doc, "rpn_score_threshold", m.rpn_score_threshold, where);
  read(doc, "roi_batch", m.roi_batch, where);
  read(doc, "roi_positive_fraction", m.roi_positive_fraction, where);
  read(doc, "roi_foreground_iou", m.roi_foreground_iou, where);
  read(doc, "box_pool", m.box_pool, where);
  read(doc, "mask_pool", m.mask_pool, where);
  read(doc, "samples_per_bin", m.samples_per_bin, where);
  read(doc, "box_hidden", m.box_hidden, where);
  read(doc, "mask_channels", m.mask_channels, where);
  read(doc, "mask_convs", m.mask_convs, where);
  read(doc, "box_score_threshold", m.box_score_threshold, where);
  read(doc, "box_nms", m.box_nms, where);
  read(doc, "detections_per_image", m.detections_per_image, where);
  read(doc, "mask_threshold", m.mask_threshold, where);
  m.validate();
  return m;
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"backbone", backbone_name(c.backbone)},
          {"stages_used", c.stages_used},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"steps_per_epoch", c.steps_per_epoch},
          {"num_foreground_classes", c.num_foreground_classes},
          {"trainable_scope", scope_name(c.trainable_scope)},
          {"seed", c.seed},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"grad_clip_norm", c.grad_clip_norm},
          {"augment", c.augment},
          {"augmentation", to_json(c.augmentation)},
          {"model", to_json(c.model)}};
}

TrainConfig train_config_from_json(const json& doc, TrainConfig c) {
  const std::string where = "train";
  check_keys(doc, {"backbone", "stages_used", "learning_rate", "epochs", "batch_size", "steps_per_epoch", "num_foreground_classes",
                   "trainable_scope", "seed", "momentum", "weight_decay", "grad_clip_norm", "augment", "augmentation",
                   "model"},
             where);
  std::string text;
  read(doc, "backbone", text, where);
  if (!text.empty()) c.backbone = parse_backbone(text);
  read(doc, "stages_used", c.stages_used, where);
  read(doc, "learning_rate", c.learning_rate, where);
  read(doc, "epochs", c.epochs, where);
  read(doc, "batch_size", c.batch_size, where);
  read(doc, "steps_per_epoch", c.steps_per_epoch, where);
  read(doc, "num_foreground_classes", c.num_foreground_classes, where);
  text.clear();
  read(doc, "trainable_scope", text, where);
  if (!text.empty()) c.trainable_scope = parse_scope(text);
  read(doc, "seed", c.seed, where);
  read(doc, "momentum", c.momentum, where);
  read(doc, "weight_decay", c.weight_decay, where);
  read(doc, "grad_clip_norm", c.grad_clip_norm, where);
  read(doc, "augment", c.augment, where);
  if (doc.contains("augmentation")) c.augmentation = augmentation_from_json(doc["augmentation"], c.augmentation);
  if (doc.contains("model")) c.model = model_options_from_json(doc["model"], c.model);
  c.validate();
  return c;
}

}  // namespace slidemask
