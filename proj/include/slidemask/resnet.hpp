#pragma once

#include <string>
#include <vector>

#include "slidemask/layers.hpp"

namespace slidemask {

enum class BackboneKind { resnet50, resnet101 };

int backbone_depth(BackboneKind kind);
std::string backbone_name(BackboneKind kind);
/// Accepts "resnet50", "ResNet-101", "101", ...
BackboneKind parse_backbone(const std::string& text);

struct BlockCache {
  Tensor x, r1, r2, out;
};

/// ResNet v1.5 bottleneck (stride on the 3x3 conv).
struct Bottleneck {
  Conv2d conv1, conv2, conv3;
  FrozenBatchNorm bn1, bn2, bn3;
  bool has_downsample = false;
  Conv2d down_conv;
  FrozenBatchNorm down_bn;

  Bottleneck() = default;
  Bottleneck(int in, int planes, int stride, bool downsample);

  Tensor forward(const Tensor& x, BlockCache* cache) const;
  Tensor backward(const BlockCache& cache, const Tensor& dy, bool want_dx);
  Tensor calibrate(const Tensor& x, float residual_gain);
  void collect(const std::string& prefix, ParamList& list);
  bool any_trainable() const;
};

struct BackboneCache {
  Tensor x, stem;  // input and post-relu stem activations
  std::vector<std::vector<BlockCache>> blocks;
};

/// Feature extractor ending at stage `stages_used` (1 = stem .. 5 = last stage).
/// Tensor names follow the torchvision layout: conv1, bn1, layer1.0.conv1, ...
class ResNetBackbone {
 public:
  ResNetBackbone() = default;
  ResNetBackbone(BackboneKind kind, int stages_used, int base_width);

  BackboneKind kind() const noexcept { return kind_; }
  int stages_used() const noexcept { return stages_used_; }
  int base_width() const noexcept { return base_width_; }
  int out_channels() const;
  int stride() const;

  Tensor forward(const Tensor& x, BackboneCache* cache = nullptr) const;
  /// Output of every stage in use; element k has the stride of stage k + 1.
  std::vector<Tensor> forward_stages(const Tensor& x, BackboneCache* cache = nullptr) const;
  /// Backpropagates into trainable tensors; stops below the earliest trainable block.
  void backward(const BackboneCache& cache, const Tensor& dy);
  /// Same with a gradient per stage output (empty tensors contribute nothing).
  void backward(const BackboneCache& cache, const std::vector<Tensor>& stage_grads);
  static int stage_stride(int stage);
  int stage_channels(int stage) const;
  /// Sets every batch-norm statistic from a calibration batch, front to back.
  void calibrate(const Tensor& batch, float residual_gain);

  void collect(const std::string& prefix, ParamList& list);
  /// Stage index (1..5) owning a backbone tensor name such as "layer3.2.conv1.weight".
  static int stage_of(const std::string& local_name);

 private:
  BackboneKind kind_ = BackboneKind::resnet50;
  int stages_used_ = 4;
  int base_width_ = 64;
  Conv2d conv1_;
  FrozenBatchNorm bn1_;
  std::vector<std::vector<Bottleneck>> layers_;
};

}  // namespace slidemask
