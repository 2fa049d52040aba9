#pragma once

#include <cstdint>
#include <functional>

#include "slidemask/checkpoint.hpp"
#include "slidemask/model.hpp"

namespace slidemask {

/// Source network for transfer learning. The whole network is trained on
/// procedural scenes of generic objects (see source_scene) so that the
/// backbone, neck and RPN carry useful features into a new task.
struct ReferenceOptions {
  BackboneKind backbone = BackboneKind::resnet101;
  int stages_used = 4;  // layout used while pretraining; tensors for the other layouts are seeded
  int head_classes = 80;
  std::uint64_t seed = 0;
  int pretrain_steps = 1500;  // 0 leaves the calibrated initialization
  double learning_rate = 0.003;
  ModelOptions model;
  std::function<void(int step, const LossBreakdown& running)> on_progress;  // every 100 steps
};

Checkpoint make_reference_checkpoint(const ReferenceOptions& options);

}  // namespace slidemask
