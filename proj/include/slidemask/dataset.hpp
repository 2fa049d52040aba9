#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slidemask/annotation.hpp"
#include "slidemask/raster.hpp"

namespace slidemask {

inline constexpr int kDefaultImageSide = 512;

/// Bilinear resize to target x target; same-size input is returned bit-identical.
Image resize_image(const Image& image, int target_width = kDefaultImageSide,
                   int target_height = kDefaultImageSide);

enum class FillMode { constant, reflect };

struct AugmentationConfig {
  double horizontal_flip = 0.5;  // probability
  double rotation_range = 15.0;  // degrees, symmetric
  double shift_range = 0.1;      // fraction of side, symmetric
  double zoom_range = 0.1;       // scale drawn from [1 - z, 1 + z]
  FillMode fill_mode = FillMode::constant;
  std::uint8_t fill_value = 0;
  std::uint64_t seed = 0;
  int copies = 1;  // outputs per augment_pair call

  /// Every range zero and flip probability zero.
  static AugmentationConfig identity();
  void validate() const;
};

/// One sampled geometric transform, applied about the image center.
struct AffineSample {
  bool flip = false;
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
  double zoom = 1.0;

  bool is_identity() const { return !flip && rotation_deg == 0.0 && shift_x == 0.0 && shift_y == 0.0 && zoom == 1.0; }
  bool is_pure_flip() const { return flip && rotation_deg == 0.0 && shift_x == 0.0 && shift_y == 0.0 && zoom == 1.0; }
};

struct AugmentedPair {
  Image image;
  std::vector<Mask> masks;
  AffineSample transform;
};

/// Applies `config.copies` sampled transforms. Images are resampled bilinearly,
/// masks by nearest neighbour. Output depends only on (config.seed, item_seed).
std::vector<AugmentedPair> augment_pair(const Image& image, const std::vector<Mask>& masks,
                                        const AugmentationConfig& config, std::uint64_t item_seed);

/// Per-item seed derived from the image id, so results do not depend on scheduling.
std::uint64_t item_seed_for(const std::string& image_id, std::uint64_t epoch = 0);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
  std::size_t total() const { return train + validation + test; }
};

struct SplitManifest {
  std::string set_name;
  std::uint64_t seed = 0;
  bool stratified = false;
  std::vector<std::string> dataset_ids;  // sorted universe the split covers
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  /// Throws ErrorKind::schema on overlap or coverage violations.
  void validate() const;
  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

/// Seeded shuffle partitioned by `counts`. When `has_landslide` is given the
/// shuffle is stratified so both classes are spread across the splits.
SplitManifest make_split(const std::vector<std::string>& ids, const SplitCounts& counts, std::uint64_t seed,
                         const std::string& set_name = "custom",
                         const std::map<std::string, bool>* has_landslide = nullptr);

std::string manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const std::string& text);
void write_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest read_manifest(const std::string& path);

struct DatasetBuildOptions {
  std::string annotations_path;  // VIA document
  std::string image_root;        // directory the VIA filenames are relative to
  std::string output_dir;        // receives images/, annotations.json, manifest.json
  int image_side = kDefaultImageSide;
  SplitCounts counts;
  std::uint64_t seed = 0;
  std::string set_name = "custom";
  bool stratify = true;
  int augment_preview = 0;  // offline augmented copies per training image, 0 = none
  AugmentationConfig augmentation;
};

/// Resizes images and annotations, writes them under output_dir and
/// returns the persisted split manifest.
SplitManifest build_dataset(const DatasetBuildOptions& options);

/// Layout of a materialized dataset directory.
struct DatasetPaths {
  static std::string images_dir(const std::string& root) { return root + "/images"; }
  static std::string image(const std::string& root, const std::string& id) { return root + "/images/" + id + ".png"; }
  static std::string annotations(const std::string& root) { return root + "/annotations.json"; }
};

}  // namespace slidemask
