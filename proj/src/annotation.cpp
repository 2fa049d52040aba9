#include "slidemask/annotation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "csv.hpp"

namespace slidemask {

using nlohmann::json;

std::string_view label_name(ClassLabel label) {
  switch (label) {
    case ClassLabel::landslide: return "Landslide";
    case ClassLabel::vegetation: return "Vegetation";
    case ClassLabel::water_body: return "Water body";
    case ClassLabel::building: return "Building";
    case ClassLabel::background: return "Background";
  }
  return "?";
}

std::string normalize_class_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : name) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

ClassLabel parse_label(std::string_view name) {
  static const std::map<std::string, ClassLabel> names = {
      {"landslide", ClassLabel::landslide},   {"landslides", ClassLabel::landslide},
      {"vegetation", ClassLabel::vegetation}, {"water body", ClassLabel::water_body},
      {"waterbody", ClassLabel::water_body},  {"water bodies", ClassLabel::water_body},
      {"building", ClassLabel::building},     {"buildings", ClassLabel::building},
      {"background", ClassLabel::background},
  };
  const auto it = names.find(normalize_class_name(name));
  if (it == names.end())
    fail(ErrorKind::taxonomy, "unknown class name '" + std::string(name) + "'");
  return it->second;
}

double Polygon::signed_area() const {
  double twice = 0.0;
  const std::size_t n = vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = vertices[i];
    const Point& b = vertices[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

bool AnnotatedImage::has_landslide() const {
  return std::any_of(regions.begin(), regions.end(),
                     [](const Region& r) { return is_positive(r.label); });
}

namespace {

[[noreturn]] void parse_error(const std::string& entry, const std::string& what) {
  fail(ErrorKind::parse, "VIA entry '" + entry + "': " + what);
}

std::string file_stem(const std::string& filename) {
  return std::filesystem::path(filename).stem().string();
}

std::vector<double> number_list(const json& node, const std::string& entry, const char* key) {
  if (!node.contains(key) || !node[key].is_array())
    parse_error(entry, std::string("polygon is missing '") + key + "'");
  std::vector<double> out;
  for (const auto& v : node[key]) {
    if (!v.is_number()) parse_error(entry, std::string("non-numeric coordinate in '") + key + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

Polygon shape_to_polygon(const json& shape, const std::string& entry) {
  if (!shape.is_object() || !shape.contains("name") || !shape["name"].is_string())
    parse_error(entry, "region has no shape name");
  const std::string name = shape["name"].get<std::string>();
  Polygon poly;
  if (name == "polygon" || name == "polyline") {
    const auto xs = number_list(shape, entry, "all_points_x");
    const auto ys = number_list(shape, entry, "all_points_y");
    if (xs.size() != ys.size()) parse_error(entry, "all_points_x and all_points_y differ in length");
    for (std::size_t i = 0; i < xs.size(); ++i) poly.vertices.push_back({xs[i], ys[i]});
    // VIA closes polylines by repeating the first vertex.
    if (poly.vertices.size() > 1 && poly.vertices.front() == poly.vertices.back())
      poly.vertices.pop_back();
  } else if (name == "rect") {
    auto get = [&](const char* k) {
      if (!shape.contains(k) || !shape[k].is_number()) parse_error(entry, std::string("rect is missing '") + k + "'");
      return shape[k].get<double>();
    };
    const double x = get("x"), y = get("y"), w = get("width"), h = get("height");
    poly.vertices = {{x, y}, {x + w, y}, {x + w, y + h}, {x, y + h}};
  } else {
    parse_error(entry, "unsupported region shape '" + name + "'");
  }
  if (poly.vertices.size() < 3)
    fail(ErrorKind::degenerate, "VIA entry '" + entry + "': polygon has " +
                                    std::to_string(poly.vertices.size()) + " vertices, need at least 3");
  for (const Point& p : poly.vertices)
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) parse_error(entry, "non-finite vertex coordinate");
  return poly;
}

std::string class_value(const json& attrs, const std::string& entry, const std::string& preferred) {
  if (!attrs.is_object()) parse_error(entry, "region_attributes is not an object");
  std::vector<std::string> keys;
  if (!preferred.empty()) {
    keys = {preferred};
  } else {
    keys = {"class", "label", "name", "type", "category"};
  }
  for (const auto& key : keys) {
    if (!attrs.contains(key)) continue;
    const json& v = attrs[key];
    if (v.is_string()) return v.get<std::string>();
    // checkbox-style attribute: {"Landslide": true}
    if (v.is_object()) {
      std::vector<std::string> on;
      for (const auto& [k, flag] : v.items())
        if (flag.is_boolean() && flag.get<bool>()) on.push_back(k);
      if (on.size() == 1) return on.front();
      parse_error(entry, "attribute '" + key + "' must select exactly one class");
    }
    parse_error(entry, "attribute '" + key + "' is not a string");
  }
  parse_error(entry, "region carries no class attribute");
}

std::optional<ImageSize> size_from_attributes(const json& file_attrs) {
  if (!file_attrs.is_object()) return std::nullopt;
  auto dim = [&](const char* k) -> std::optional<int> {
    if (!file_attrs.contains(k)) return std::nullopt;
    const json& v = file_attrs[k];
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) {
      try {
        return std::stoi(v.get<std::string>());
      } catch (...) {
        return std::nullopt;
      }
    }
    return std::nullopt;
  };
  auto w = dim("width"), h = dim("height");
  if (w && h) return ImageSize{*w, *h};
  return std::nullopt;
}

void clamp_to_frame(AnnotatedImage& image) {
  int clamped = 0;
  for (Region& r : image.regions) {
    for (Point& p : r.polygon.vertices) {
      const Point before = p;
      p.x = std::clamp(p.x, 0.0, static_cast<double>(image.width));
      p.y = std::clamp(p.y, 0.0, static_cast<double>(image.height));
      clamped += !(before == p);
    }
  }
  if (clamped > 0)
    spdlog::warn("{}: clamped {} vertices to the {}x{} frame", image.image_id, clamped, image.width,
                 image.height);
}

struct EntryBuilder {
  const ViaParseOptions& options;
  std::set<std::string> seen_ids;

  AnnotatedImage start(const std::string& entry, const std::string& filename, const json& file_attrs) {
    if (filename.empty()) parse_error(entry, "missing filename");
    AnnotatedImage image;
    image.source_path = filename;
    image.image_id = file_stem(filename);
    if (!seen_ids.insert(image.image_id).second)
      parse_error(entry, "duplicate image id '" + image.image_id + "'");
    auto size = size_from_attributes(file_attrs);
    if (!size && options.resolve_size) size = options.resolve_size(filename);
    if (!size) parse_error(entry, "image dimensions unknown (no width/height attributes, no resolver)");
    if (size->width <= 0 || size->height <= 0) parse_error(entry, "image dimensions must be positive");
    image.width = size->width;
    image.height = size->height;
    return image;
  }

  Region region(const std::string& entry, const json& shape, const json& attrs) {
    Region r;
    r.polygon = shape_to_polygon(shape, entry);
    r.label = parse_label(class_value(attrs, entry, options.class_attribute));
    return r;
  }
};

std::vector<AnnotatedImage> parse_json(const json& root, const ViaParseOptions& options) {
  const json* entries = &root;
  if (root.contains("_via_img_metadata")) entries = &root["_via_img_metadata"];
  if (!entries->is_object()) fail(ErrorKind::parse, "VIA document has no file entries object");

  // Project saves list entries in _via_image_id_list; honour it when present.
  std::vector<std::string> order;
  if (root.contains("_via_image_id_list") && root["_via_image_id_list"].is_array()) {
    for (const auto& k : root["_via_image_id_list"])
      if (k.is_string() && entries->contains(k.get<std::string>())) order.push_back(k.get<std::string>());
  }
  if (order.empty())
    for (const auto& [k, _] : entries->items())
      if (k.rfind("_via", 0) != 0) order.push_back(k);

  EntryBuilder builder{options, {}};
  std::vector<AnnotatedImage> out;
  for (const auto& key : order) {
    const json& entry = (*entries)[key];
    if (!entry.is_object() || !entry.contains("filename") || !entry["filename"].is_string())
      parse_error(key, "entry has no filename");
    const json file_attrs = entry.value("file_attributes", json::object());
    AnnotatedImage image = builder.start(key, entry["filename"].get<std::string>(), file_attrs);
    if (entry.contains("regions")) {
      const json& regions = entry["regions"];
      if (!regions.is_array() && !regions.is_object()) parse_error(key, "regions is neither list nor object");
      for (const auto& [_, reg] : regions.items()) {
        if (!reg.is_object()) parse_error(key, "region is not an object");
        image.regions.push_back(builder.region(key, reg.value("shape_attributes", json::object()),
                                               reg.value("region_attributes", json::object())));
      }
    }
    clamp_to_frame(image);
    out.push_back(std::move(image));
  }
  return out;
}

json cell_json(const std::string& cell, const std::string& entry) {
  try {
    return cell.empty() ? json::object() : json::parse(cell);
  } catch (const json::parse_error& e) {
    parse_error(entry, std::string("malformed JSON cell: ") + e.what());
  }
}

std::vector<AnnotatedImage> parse_csv(std::string_view text, const ViaParseOptions& options) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty()) fail(ErrorKind::parse, "VIA CSV export is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[rows[0][i]] = i;
  for (const char* need : {"filename", "region_shape_attributes", "region_attributes"})
    if (!col.count(need)) fail(ErrorKind::parse, std::string("VIA CSV export lacks column '") + need + "'");

  EntryBuilder builder{options, {}};
  std::vector<AnnotatedImage> out;
  std::map<std::string, std::size_t> by_file;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    auto cell = [&](const char* name) -> std::string {
      auto it = col.find(name);
      return it != col.end() && it->second < row.size() ? row[it->second] : std::string();
    };
    const std::string filename = cell("filename");
    const std::string entry = filename.empty() ? "row " + std::to_string(r + 1) : filename;
    if (row.size() != rows[0].size()) parse_error(entry, "row has " + std::to_string(row.size()) + " columns");
    auto it = by_file.find(filename);
    if (it == by_file.end()) {
      out.push_back(builder.start(entry, filename, cell_json(cell("file_attributes"), entry)));
      it = by_file.emplace(filename, out.size() - 1).first;
    }
    const json shape = cell_json(cell("region_shape_attributes"), entry);
    const std::string count = cell("region_count");
    if (count == "0" || (shape.is_object() && shape.empty())) continue;
    out[it->second].regions.push_back(builder.region(entry, shape, cell_json(cell("region_attributes"), entry)));
  }
  for (auto& image : out) clamp_to_frame(image);
  return out;
}

}  // namespace

std::vector<AnnotatedImage> parse_via(std::string_view document, const ViaParseOptions& options) {
  const auto first = document.find_first_not_of(" \t\r\n\xef\xbb\xbf");
  if (first == std::string_view::npos) fail(ErrorKind::parse, "empty VIA document");
  if (document[first] == '{') {
    json root;
    try {
      root = json::parse(document.begin(), document.end());
    } catch (const json::parse_error& e) {
      fail(ErrorKind::parse, std::string("malformed VIA JSON: ") + e.what());
    }
    return parse_json(root, options);
  }
  return parse_csv(document, options);
}

std::vector<AnnotatedImage> parse_via_file(const std::string& path, const ViaParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "cannot open annotation file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_via(ss.str(), options);
}

std::string write_via(const std::vector<AnnotatedImage>& images) {
  json root = json::object();
  for (const auto& image : images) {
    json entry;
    entry["filename"] = image.source_path;
    entry["size"] = -1;
    entry["file_attributes"] = {{"width", image.width}, {"height", image.height}};
    json regions = json::array();
    for (const auto& r : image.regions) {
      json xs = json::array(), ys = json::array();
      for (const auto& p : r.polygon.vertices) {
        xs.push_back(p.x);
        ys.push_back(p.y);
      }
      regions.push_back({{"shape_attributes", {{"name", "polygon"}, {"all_points_x", xs}, {"all_points_y", ys}}},
                         {"region_attributes", {{"class", std::string(label_name(r.label))}}}});
    }
    entry["regions"] = regions;
    root[image.source_path + "-1"] = entry;
  }
  return root.dump(1) + "\n";
}

RasterResult rasterize_polygon(const Polygon& polygon, int width, int height) {
  require(width > 0 && height > 0, "raster size must be positive");
  RasterResult result{Mask(width, height, 1, 0), false};
  const auto& v = polygon.vertices;
  if (v.size() < 3 || std::abs(polygon.signed_area()) <= 1e-12) {
    result.degenerate = true;
    return result;
  }
  std::vector<double> xs;
  for (int row = 0; row < height; ++row) {
    const double py = row + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
      const Point& a = v[i];
      const Point& b = v[j];
      // half-open in y: an edge counts when it straddles py with one end strictly above
      if ((a.y > py) != (b.y > py)) xs.push_back(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // fill centers with xs[k] <= px < xs[k+1]
      int first = static_cast<int>(std::ceil(xs[k] - 0.5));
      int last = static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1;
      first = std::max(first, 0);
      last = std::min(last, width - 1);
      for (int col = first; col <= last; ++col) result.mask.at(col, row) = 1;
    }
  }
  return result;
}

RasterResult rasterize_mask(const Region& region, int width, int height) {
  auto result = rasterize_polygon(region.polygon, width, height);
  if (result.degenerate) spdlog::warn("degenerate {} polygon rasterized to an empty mask", label_name(region.label));
  return result;
}

AnnotatedImage scale_annotations(const AnnotatedImage& image, int target_width, int target_height) {
  require(target_width > 0 && target_height > 0, "scale target must be positive");
  require(image.width > 0 && image.height > 0, "image " + image.image_id + " has no dimensions");
  AnnotatedImage out = image;
  const double sx = static_cast<double>(target_width) / image.width;
  const double sy = static_cast<double>(target_height) / image.height;
  for (Region& r : out.regions)
    for (Point& p : r.polygon.vertices) {
      p.x *= sx;
      p.y *= sy;
    }
  out.width = target_width;
  out.height = target_height;
  return out;
}

}  // namespace slidemask
