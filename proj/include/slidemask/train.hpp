#pragma once

#include <functional>
#include <string>
#include <vector>

#include "slidemask/dataset.hpp"
#include "slidemask/model.hpp"

namespace slidemask {

struct EpochLossRecord {
  std::string split;  // "train" or "validation"
  int epoch = 0;      // 1-based
  LossBreakdown loss;
  double total() const { return loss.total(); }
};

struct TrainOptions {
  std::string weights_dir;  // best-validation weights; empty skips saving
  std::string loss_log;     // CSV path; empty skips
  nlohmann::ordered_json weights_extra = nlohmann::ordered_json::object();
  std::function<void(const EpochLossRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLossRecord> train;
  std::vector<EpochLossRecord> validation;
  int best_epoch = 0;
  double best_loss = 0;  // validation loss, or training loss when there is no validation split
  std::size_t dropped_background = 0;
};

/// SGD with momentum and weight decay. Gradients are averaged over `batch`,
/// each tensor's gradient is clipped to grad_clip_norm, then applied and zeroed.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(const TrainConfig& config);
  void step(const ParamList& params, int batch);

 private:
  double lr_, momentum_, decay_, clip_;
};

/// One model-sized training example.
struct TrainingSample {
  std::string id;
  Image image;
  std::vector<Mask> masks;
  std::vector<int> classes;  // 1..K
};

/// Reads the images of `ids` from a materialized dataset, resized to `side`.
/// Background regions and classes beyond the network's taxonomy are dropped.
std::vector<TrainingSample> load_samples(const std::string& data_root, const std::vector<std::string>& ids, int side,
                                         int num_foreground_classes, std::size_t* dropped_background = nullptr);

/// Ground truth for the network; instances whose mask is empty are skipped.
TrainTargets make_targets(const std::vector<Mask>& masks, const std::vector<int>& classes);

/// Trains the tensors in the model's trainable scope for config.epochs with
/// SGD + momentum. Losses are logged per epoch on both splits and the weights
/// of the best epoch are persisted and left in the model.
TrainResult train(MaskRcnn& model, const SplitManifest& manifest, const std::string& data_root,
                  const TrainOptions& options = {});

std::string loss_log_csv(const TrainResult& result);

}  // namespace slidemask
