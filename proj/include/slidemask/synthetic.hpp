#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slidemask/annotation.hpp"
#include "slidemask/raster.hpp"

namespace slidemask {

struct SyntheticOptions {
  int count = 12;
  int side = 128;
  int negatives = 2;         // images without a landslide, placed last
  bool distractors = true;   // water bodies, buildings and vegetation patches
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  Image image;
  AnnotatedImage annotation;  // source_path is "<id>.png"
};

/// Scene `index` of the set; depends only on (seed, index).
SyntheticScene synthetic_scene(const SyntheticOptions& options, int index);

/// Scene of generic objects for source-task pretraining: each class is a
/// (shape, color) pair; classes are 1..num_classes.
struct SourceScene {
  Image image;
  std::vector<Mask> masks;
  std::vector<int> classes;
};
SourceScene source_scene(std::uint64_t seed, int index, int side, int num_classes);

/// Writes images/<id>.png and annotations.json (VIA) under out_dir.
std::vector<AnnotatedImage> write_synthetic_dataset(const SyntheticOptions& options, const std::string& out_dir);

}  // namespace slidemask
