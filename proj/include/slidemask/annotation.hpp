#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slidemask/raster.hpp"

namespace slidemask {

enum class ClassLabel { landslide, vegetation, water_body, building, background };

inline constexpr ClassLabel kAllLabels[] = {ClassLabel::landslide, ClassLabel::vegetation,
                                            ClassLabel::water_body, ClassLabel::building,
                                            ClassLabel::background};

/// Canonical display name ("Landslide", "Water body", ...).
std::string_view label_name(ClassLabel label);

/// Case-insensitive, whitespace-normalized lookup. Throws ErrorKind::taxonomy
/// naming the offending string.
ClassLabel parse_label(std::string_view name);

inline bool is_positive(ClassLabel label) { return label == ClassLabel::landslide; }

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Polygon {
  std::vector<Point> vertices;

  double signed_area() const;
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

struct Region {
  Polygon polygon;
  ClassLabel label = ClassLabel::background;
  friend bool operator==(const Region&, const Region&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct AnnotatedImage {
  std::string image_id;
  std::string source_path;
  int width = 0;
  int height = 0;
  std::vector<Region> regions;

  bool has_landslide() const;
  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

struct ViaParseOptions {
  /// Resolves pixel dimensions for a file entry when the entry does not carry
  /// "width"/"height" file attributes. VIA itself only records byte sizes.
  std::function<std::optional<ImageSize>(const std::string& filename)> resolve_size;
  /// Region attribute holding the class name. Empty selects the first of
  /// "class", "label", "name", "type", "category" present on the region.
  std::string class_attribute;
};

/// Parses a VIA project save, VIA JSON export or VIA CSV export.
std::vector<AnnotatedImage> parse_via(std::string_view document, const ViaParseOptions& options = {});
std::vector<AnnotatedImage> parse_via_file(const std::string& path, const ViaParseOptions& options = {});

/// Writes images as a VIA JSON export carrying width/height file attributes
/// and a "class" region attribute, readable by parse_via.
std::string write_via(const std::vector<AnnotatedImage>& images);

struct RasterResult {
  Mask mask;
  bool degenerate = false;  // zero-area polygon, mask left empty
};

/// Pixel-center even-odd fill with a half-open (top-left) boundary rule.
RasterResult rasterize_mask(const Region& region, int width, int height);
RasterResult rasterize_polygon(const Polygon& polygon, int width, int height);

AnnotatedImage scale_annotations(const AnnotatedImage& image, int target_width, int target_height);

/// Normalized class-name key: lower case, whitespace runs collapsed to one space.
std::string normalize_class_name(std::string_view name);

}  // namespace slidemask
