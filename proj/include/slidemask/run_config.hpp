#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "slidemask/dataset.hpp"
#include "slidemask/model.hpp"

namespace slidemask {

inline constexpr int kRunConfigVersion = 1;

struct DatasetSection {
  SplitCounts counts{101, 28, 31};
  std::uint64_t seed = 0;
  std::string set_name = "A";
  int image_side = kDefaultImageSide;
  bool stratify = true;
  int augment_preview = 0;
};

struct InferenceSection {
  double threshold = 0.8;
  std::string split = "test";  // test | validation | all
  bool overlays = true;
};

struct ReportSection {
  int frames = 10;
  std::uint64_t seed = 0;
  std::string model_name;    // empty: derived from the backbone, e.g. "ResNet-101"
  std::string dataset_name;  // empty: "Dataset <set_name>"
};

/// The single document a run is driven by. Paths are taken as given
/// (relative paths resolve against the working directory).
struct RunConfig {
  int version = kRunConfigVersion;
  std::string run_id;
  std::string data_root;    // holds annotations.json and images/
  std::string annotations;  // overrides <data_root>/annotations.json
  std::string images;       // overrides <data_root>/images
  std::string pretrained;   // checkpoint file; empty trains from a fresh initialization
  DatasetSection dataset;
  AugmentationConfig augmentation;
  TrainConfig train;
  InferenceSection inference;
  ReportSection report;

  std::string annotations_path() const;
  std::string images_dir() const;
  std::string model_name() const;
  std::string dataset_name() const;
  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
/// Unknown keys and wrong types are config errors.
RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig base = {});
RunConfig read_run_config(const std::string& path);

/// Runs root: $SLIDEMASK_RUNS when set, else "runs".
std::string default_runs_root();

/// Artifact layout under <runs_root>/<run_id>.
struct RunPaths {
  std::string dir;

  std::string config() const { return dir + "/config.json"; }
  std::string data() const { return dir + "/data"; }
  std::string manifest() const { return dir + "/data/manifest.json"; }
  std::string loss_log() const { return dir + "/loss_log.csv"; }
  std::string weights() const { return dir + "/weights"; }
  std::string verdicts() const { return dir + "/verdicts"; }
  std::string overlays() const { return dir + "/overlays"; }
  std::string truth() const { return dir + "/truth.csv"; }
  std::string report() const { return dir + "/report"; }
  std::string failed() const { return dir + "/FAILED"; }
};

}  // namespace slidemask
