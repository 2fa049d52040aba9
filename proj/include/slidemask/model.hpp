#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slidemask/annotation.hpp"
#include "slidemask/checkpoint.hpp"
#include "slidemask/dataset.hpp"
#include "slidemask/detection.hpp"
#include "slidemask/layers.hpp"
#include "slidemask/resnet.hpp"

namespace slidemask {

enum class TrainableScope { heads, heads_stage5, all };

std::string scope_name(TrainableScope scope);
TrainableScope parse_scope(const std::string& text);

/// Architecture and sampling knobs. Defaults follow the usual Mask R-CNN settings.
struct ModelOptions {
  int image_size = 512;
  int backbone_width = 64;  // channels of the stem; 64 for the standard network
  int neck_channels = 256;  // width of the top-down feature map the heads read
  std::vector<double> anchor_scales = {32, 64, 128, 256, 512};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};
  int rpn_channels = 512;
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  double rpn_positive_iou = 0.7;
  double rpn_negative_iou = 0.3;
  int rpn_pre_nms_train = 2000;
  int rpn_post_nms_train = 2000;
  int rpn_pre_nms_test = 1000;
  int rpn_post_nms_test = 1000;
  double rpn_nms = 0.7;
  double rpn_score_threshold = 0.0;  // minimum objectness for a proposal
  int roi_batch = 512;
  double roi_positive_fraction = 0.25;
  double roi_foreground_iou = 0.5;
  int box_pool = 7;
  int mask_pool = 14;
  int samples_per_bin = 4;
  int box_hidden = 1024;
  int mask_channels = 256;
  int mask_convs = 4;
  double box_score_threshold = 0.05;
  double box_nms = 0.5;
  int detections_per_image = 100;
  double mask_threshold = 0.5;

  void validate() const;
  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

struct TrainConfig {
  BackboneKind backbone = BackboneKind::resnet50;
  int stages_used = 4;
  double learning_rate = 0.001;
  int epochs = 20;
  int batch_size = 1;
  int steps_per_epoch = 0;  // images per epoch; 0 = one pass over the training split
  int num_foreground_classes = 4;
  TrainableScope trainable_scope = TrainableScope::heads;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip_norm = 5.0;  // 0 disables clipping
  bool augment = true;
  AugmentationConfig augmentation;
  ModelOptions model;

  /// Throws ErrorKind::config naming the offending field.
  void validate() const;
};

/// Foreground labels the network predicts, index k maps to class k + 1.
std::vector<ClassLabel> foreground_labels(int num_foreground_classes);

struct LossBreakdown {
  double rpn_class = 0, rpn_bbox = 0, cls = 0, bbox = 0, mask = 0;
  double total() const { return rpn_class + rpn_bbox + cls + bbox + mask; }
  bool finite() const;
};

/// Ground truth for one model-sized image.
struct TrainTargets {
  std::vector<Box> boxes;
  std::vector<int> classes;  // 1..K
  std::vector<Mask> masks;   // model-sized
  /// Replaces the RPN output as RoI candidates when set (the ground-truth boxes
  /// are still appended). Lets gradient checks hold the sampling fixed.
  std::optional<std::vector<Box>> proposals;
};

/// A raw detection in model input coordinates with its 28x28 mask probabilities.
struct RawDetection {
  Box box;
  int cls = 0;
  float score = 0;
  int mask_side = 0;
  std::vector<float> mask;
};

class MaskRcnn {
 public:
  /// head_classes counts foreground classes of the heads (the config's value
  /// unless building a source network with a different taxonomy).
  MaskRcnn(const TrainConfig& config, int head_classes);
  MaskRcnn(const MaskRcnn&) = delete;
  MaskRcnn& operator=(const MaskRcnn&) = delete;

  const TrainConfig& config() const noexcept { return config_; }
  int num_classes() const noexcept { return classes_; }  // foreground + background
  int depth() const { return backbone_depth(config_.backbone); }
  const ResNetBackbone& backbone() const noexcept { return backbone_; }

  const ParamList& parameters() const noexcept { return params_; }
  Parameter* find(const std::string& name) const;
  bool is_backbone(const std::string& name) const;
  /// Head tensors whose shape depends on the class count.
  bool is_class_specific(const std::string& name) const;

  /// Marks tensors trainable per the scope and clears their gradients.
  void set_trainable(TrainableScope scope);
  void zero_grad();

  /// Losses for one image; accumulates gradients when `backward` is set.
  LossBreakdown train_step(const Tensor& image, const TrainTargets& targets, Rng& rng, bool backward);
  std::vector<RawDetection> predict(const Tensor& image) const;

  void calibrate_backbone(const Tensor& batch, float residual_gain);
  /// Stride of the feature map the heads read.
  int feature_stride() const;
  /// Reinitializes the listed tensors (or all when empty) under `seed`.
  void initialize(std::uint64_t seed, const std::vector<std::string>& only = {});

  Checkpoint to_checkpoint() const;

 private:
  struct Heads;
  struct NeckCache;
  Tensor neck_forward(const Tensor& x, BackboneCache* bcache, NeckCache* nc) const;
  void neck_backward(const NeckCache& nc, const BackboneCache& bcache, const Tensor& dfeat, bool backbone_grad);
  TrainConfig config_;
  int classes_;
  ResNetBackbone backbone_;
  // top-down neck: lateral of the last stage, upsampled onto the lateral of
  // the stage before (when that one is finer), then a 3x3 smoothing conv
  Conv2d lateral_top_, lateral_skip_, smooth_;
  bool merge_ = false;
  Conv2d rpn_conv_, rpn_cls_, rpn_bbox_;
  Linear fc6_, fc7_, cls_score_, bbox_pred_;
  std::vector<Conv2d> mask_fcn_;
  ConvTranspose2x2 mask_up_;
  Conv2d mask_logits_;
  ParamList params_;
  std::vector<std::string> class_specific_;
};

using ModelHandle = std::shared_ptr<MaskRcnn>;

/// Builds a freshly initialized network (seeded by config.seed).
ModelHandle build_model(const TrainConfig& config);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> reinitialized;
  std::vector<std::string> unused;  // present in the checkpoint only
};

/// Loads backbone and RPN tensors; heads whose shapes differ are reinitialized
/// under config.seed. A missing or mis-shaped backbone tensor is a checkpoint error.
LoadReport load_pretrained(MaskRcnn& model, const Checkpoint& checkpoint);
LoadReport load_pretrained(MaskRcnn& model, const std::string& checkpoint_path);

/// Trained weights directory: checkpoint + metadata.json.
void save_weights(const MaskRcnn& model, const std::string& dir, const nlohmann::ordered_json& extra = {});
ModelHandle load_weights(const std::string& dir);

/// uint8 RGB to a normalized [1,3,S,S] tensor after resizing to the model side.
Tensor image_tensor(const Image& image, int side);

}  // namespace slidemask
