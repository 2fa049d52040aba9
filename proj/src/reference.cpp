#include "slidemask/reference.hpp"

#include <algorithm>

#include "slidemask/synthetic.hpp"
#include "slidemask/train.hpp"

namespace slidemask {

namespace {

constexpr int kCalibrationImages = 8;
constexpr std::uint64_t kCalibrationOffset = 1000000;

TrainConfig base_config(const ReferenceOptions& o, int stages) {
  TrainConfig c;
  c.backbone = o.backbone;
  c.stages_used = stages;
  c.seed = o.seed;
  c.model = o.model;
  c.trainable_scope = TrainableScope::all;
  c.learning_rate = o.learning_rate;
  c.batch_size = 1;
  c.augment = false;
  return c;
}

}  // namespace

Checkpoint make_reference_checkpoint(const ReferenceOptions& o) {
  require(o.stages_used >= 1 && o.stages_used <= 5, "stages_used must be in 1..5");
  require(o.pretrain_steps >= 0, "pretrain_steps must be non-negative");
  const int side = o.model.image_size;

  // all five stages exist in the checkpoint; batch norm is set from source scenes
  MaskRcnn full(base_config(o, 5), o.head_classes);
  {
    Tensor batch({kCalibrationImages, 3, side, side});
    const std::size_t per = static_cast<std::size_t>(3) * side * side;
    for (int i = 0; i < kCalibrationImages; ++i) {
      const Tensor t = image_tensor(source_scene(o.seed, kCalibrationOffset + i, side, o.head_classes).image, side);
      std::copy(t.storage().begin(), t.storage().end(), batch.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    full.calibrate_backbone(batch, 0.5f);
  }
  Checkpoint ck = full.to_checkpoint();

  if (o.pretrain_steps > 0) {
    const TrainConfig cfg = base_config(o, o.stages_used);
    MaskRcnn net(cfg, o.head_classes);
    load_pretrained(net, ck);
    SgdOptimizer sgd(cfg);
    net.zero_grad();
    LossBreakdown running;
    for (int step = 0; step < o.pretrain_steps; ++step) {
      const SourceScene scene = source_scene(o.seed, step, side, o.head_classes);
      Rng rng(o.seed ^ 0x50ceULL, static_cast<std::uint64_t>(step));
      const LossBreakdown loss = net.train_step(image_tensor(scene.image, side), make_targets(scene.masks, scene.classes),
                                                rng, true);
      if (!loss.finite()) throw DivergenceError(0, "non-finite loss while pretraining at step " + std::to_string(step));
      sgd.step(net.parameters(), 1);
      const double w = step ? 0.02 : 1.0;
      running.rpn_class += w * (loss.rpn_class - running.rpn_class);
      running.rpn_bbox += w * (loss.rpn_bbox - running.rpn_bbox);
      running.cls += w * (loss.cls - running.cls);
      running.bbox += w * (loss.bbox - running.bbox);
      running.mask += w * (loss.mask - running.mask);
      if (o.on_progress && (step + 1) % 100 == 0) o.on_progress(step + 1, running);
    }
    for (const auto& [name, p] : net.parameters()) ck.tensors[name] = p->value;
  }

  // neck tensors for every other stage layout
  for (int stages = 1; stages <= 4; ++stages) {
    if (stages == o.stages_used) continue;
    const MaskRcnn other(base_config(o, stages), o.head_classes);
    for (const auto& [name, p] : other.parameters()) ck.tensors.emplace(name, p->value);
  }
  ck.metadata["stages_used"] = o.stages_used;
  ck.metadata["source"] = "reference";
  ck.metadata["seed"] = o.seed;
  ck.metadata["pretrain_steps"] = o.pretrain_steps;
  return ck;
}

}  // namespace slidemask
