#include "slidemask/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "slidemask/image_io.hpp"
#include "slidemask/raster_ops.hpp"
#include "slidemask/rng.hpp"

namespace slidemask {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

Image resize_image(const Image& image, int target_width, int target_height) {
  require(image.width() > 0 && image.height() > 0, "cannot resize an empty image");
  return resize_bilinear(image, target_width, target_height);
}

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.horizontal_flip = 0.0;
  c.rotation_range = 0.0;
  c.shift_range = 0.0;
  c.zoom_range = 0.0;
  return c;
}

void AugmentationConfig::validate() const {
  if (!(horizontal_flip >= 0.0 && horizontal_flip <= 1.0))
    fail(ErrorKind::config, "horizontal_flip must be a probability in [0,1]");
  if (!(rotation_range >= 0.0) || !(shift_range >= 0.0) || !(zoom_range >= 0.0))
    fail(ErrorKind::config, "augmentation ranges must be >= 0");
  if (zoom_range >= 1.0) fail(ErrorKind::config, "zoom_range must be < 1");
  if (copies < 1) fail(ErrorKind::config, "augmentation copies must be >= 1");
}

std::uint64_t item_seed_for(const std::string& image_id, std::uint64_t epoch) {
  return stable_hash(image_id) ^ Rng::mix(epoch);
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

AffineSample sample_transform(Rng& rng, const AugmentationConfig& c, int width, int height) {
  // Draw every component unconditionally so the stream layout is fixed.
  AffineSample s;
  s.flip = rng.uniform() < c.horizontal_flip;
  s.rotation_deg = rng.uniform(-c.rotation_range, c.rotation_range);
  s.shift_x = rng.uniform(-c.shift_range, c.shift_range) * width;
  s.shift_y = rng.uniform(-c.shift_range, c.shift_range) * height;
  s.zoom = 1.0 + c.zoom_range * (2.0 * rng.uniform() - 1.0);
  return s;
}

// Maps an output-space point to source space (inverse of the forward transform).
struct InverseMap {
  double cx, cy, tx, ty, cos_t, sin_t, inv_zoom;
  bool flip;

  InverseMap(const AffineSample& s, int width, int height)
      : cx(width / 2.0), cy(height / 2.0), tx(s.shift_x), ty(s.shift_y),
        cos_t(std::cos(s.rotation_deg * M_PI / 180.0)), sin_t(std::sin(s.rotation_deg * M_PI / 180.0)),
        inv_zoom(1.0 / s.zoom), flip(s.flip) {}

  void operator()(double ox, double oy, double& sx, double& sy) const {
    const double vx = ox - cx - tx;
    const double vy = oy - cy - ty;
    double rx = (cos_t * vx + sin_t * vy) * inv_zoom;
    const double ry = (-sin_t * vx + cos_t * vy) * inv_zoom;
    if (flip) rx = -rx;
    sx = rx + cx;
    sy = ry + cy;
  }
};

Image warp_image(const Image& src, const AffineSample& s, const AugmentationConfig& c) {
  const int w = src.width(), h = src.height(), ch = src.channels();
  Image out(w, h, ch);
  const InverseMap map(s, w, h);
  auto fetch = [&](int x, int y, int k) -> double {
    if (c.fill_mode == FillMode::reflect) return src.at(reflect_index(x, w), reflect_index(y, h), k);
    if (x < 0 || y < 0 || x >= w || y >= h) return c.fill_value;
    return src.at(x, y, k);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sx, sy;
      map(x + 0.5, y + 0.5, sx, sy);
      const double u = sx - 0.5, v = sy - 0.5;
      const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
      const double wx = u - x0, wy = v - y0;
      for (int k = 0; k < ch; ++k) {
        const double top = (1 - wx) * fetch(x0, y0, k) + wx * fetch(x0 + 1, y0, k);
        const double bot = (1 - wx) * fetch(x0, y0 + 1, k) + wx * fetch(x0 + 1, y0 + 1, k);
        out.at(x, y, k) = detail::from_real<std::uint8_t>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Mask warp_mask(const Mask& src, const AffineSample& s, FillMode fill) {
  const int w = src.width(), h = src.height();
  Mask out(w, h, 1, 0);
  const InverseMap map(s, w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sx, sy;
      map(x + 0.5, y + 0.5, sx, sy);
      int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
      if (fill == FillMode::reflect) {
        ix = reflect_index(ix, w);
        iy = reflect_index(iy, h);
      } else if (ix < 0 || iy < 0 || ix >= w || iy >= h) {
        continue;
      }
      out.at(x, y) = src.at(ix, iy) != 0;
    }
  }
  return out;
}

}  // namespace

std::vector<AugmentedPair> augment_pair(const Image& image, const std::vector<Mask>& masks,
                                        const AugmentationConfig& config, std::uint64_t item_seed) {
  config.validate();
  for (const Mask& m : masks)
    if (m.width() != image.width() || m.height() != image.height())
      fail(ErrorKind::contract, "mask is " + std::to_string(m.width()) + "x" + std::to_string(m.height()) +
                                    " but image is " + std::to_string(image.width()) + "x" +
                                    std::to_string(image.height()));
  Rng rng(config.seed, item_seed);
  std::vector<AugmentedPair> out;
  for (int k = 0; k < config.copies; ++k) {
    AugmentedPair pair;
    pair.transform = sample_transform(rng, config, image.width(), image.height());
    if (pair.transform.is_identity()) {
      pair.image = image;
      pair.masks = masks;
    } else if (pair.transform.is_pure_flip()) {
      pair.image = flip_horizontal(image);
      for (const Mask& m : masks) pair.masks.push_back(flip_horizontal(m));
    } else {
      pair.image = warp_image(image, pair.transform, config);
      for (const Mask& m : masks) pair.masks.push_back(warp_mask(m, pair.transform, config.fill_mode));
    }
    out.push_back(std::move(pair));
  }
  return out;
}

SplitManifest make_split(const std::vector<std::string>& ids, const SplitCounts& counts, std::uint64_t seed,
                         const std::string& set_name, const std::map<std::string, bool>* has_landslide) {
  if (counts.total() != ids.size())
    fail(ErrorKind::split, "split counts sum to " + std::to_string(counts.total()) + " but the dataset has " +
                               std::to_string(ids.size()) + " images");
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    fail(ErrorKind::contract, "duplicate image id '" + *std::adjacent_find(sorted.begin(), sorted.end()) + "'");

  SplitManifest m;
  m.set_name = set_name;
  m.seed = seed;
  m.dataset_ids = sorted;
  const std::size_t quotas[3] = {counts.train, counts.validation, counts.test};
  std::vector<std::string>* lists[3] = {&m.train, &m.validation, &m.test};

  if (has_landslide == nullptr) {
    Rng rng(seed, 0);
    rng.shuffle(sorted);
    std::size_t pos = 0;
    for (int s = 0; s < 3; ++s) {
      lists[s]->assign(sorted.begin() + pos, sorted.begin() + pos + quotas[s]);
      pos += quotas[s];
    }
    return m;
  }

  m.stratified = true;
  std::vector<std::string> positives, negatives;
  for (const auto& id : sorted) {
    const auto it = has_landslide->find(id);
    require(it != has_landslide->end(), "no stratum for image '" + id + "'");
    (it->second ? positives : negatives).push_back(id);
  }
  Rng rng(seed, 1);
  rng.shuffle(positives);
  rng.shuffle(negatives);

  // Largest-remainder allocation of positives proportional to split size.
  const std::size_t total = ids.size();
  std::size_t pos_quota[3];
  std::size_t assigned = 0;
  std::vector<std::pair<std::size_t, int>> remainders;
  for (int s = 0; s < 3; ++s) {
    const std::size_t num = quotas[s] * positives.size();
    pos_quota[s] = total ? num / total : 0;
    assigned += pos_quota[s];
    remainders.push_back({total ? num % total : 0, s});
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < positives.size(); ++i, ++assigned) ++pos_quota[remainders[i % 3].second];

  std::size_t p = 0, n = 0;
  for (int s = 0; s < 3; ++s) {
    const std::size_t np = pos_quota[s], nn = quotas[s] - pos_quota[s];
    lists[s]->insert(lists[s]->end(), positives.begin() + p, positives.begin() + p + np);
    lists[s]->insert(lists[s]->end(), negatives.begin() + n, negatives.begin() + n + nn);
    p += np;
    n += nn;
    rng.shuffle(*lists[s]);
  }
  return m;
}

void SplitManifest::validate() const {
  std::map<std::string, const char*> where;
  const std::pair<const char*, const std::vector<std::string>*> parts[] = {
      {"train", &train}, {"validation", &validation}, {"test", &test}};
  for (const auto& [name, list] : parts) {
    for (const auto& id : *list) {
      const auto [it, inserted] = where.emplace(id, name);
      if (!inserted)
        fail(ErrorKind::schema, "image '" + id + "' appears in both " + it->second + " and " + name);
    }
  }
  const std::set<std::string> universe(dataset_ids.begin(), dataset_ids.end());
  if (universe.size() != dataset_ids.size()) fail(ErrorKind::schema, "dataset_ids contains duplicates");
  for (const auto& id : dataset_ids)
    if (!where.count(id)) fail(ErrorKind::schema, "coverage violation: image '" + id + "' is not assigned to any split");
  for (const auto& [id, name] : where)
    if (!universe.count(id))
      fail(ErrorKind::schema, "coverage violation: image '" + id + "' in " + name + " is not part of dataset_ids");
}

std::string manifest_to_json(const SplitManifest& m) {
  ojson j;
  j["format"] = "slidemask.manifest";
  j["version"] = 1;
  j["set_name"] = m.set_name;
  j["seed"] = m.seed;
  j["stratified"] = m.stratified;
  j["counts"] = {{"train", m.train.size()}, {"validation", m.validation.size()}, {"test", m.test.size()}};
  j["dataset_ids"] = m.dataset_ids;
  j["train"] = m.train;
  j["validation"] = m.validation;
  j["test"] = m.test;
  return j.dump(2) + "\n";
}

SplitManifest manifest_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    fail(ErrorKind::schema, std::string("manifest is not valid JSON: ") + e.what());
  }
  auto need = [&](const char* key) -> const ojson& {
    if (!j.is_object() || !j.contains(key)) fail(ErrorKind::schema, std::string("manifest lacks field '") + key + "'");
    return j[key];
  };
  if (need("format") != "slidemask.manifest") fail(ErrorKind::schema, "not a slidemask manifest");
  if (need("version") != 1) fail(ErrorKind::schema, "unsupported manifest version");
  auto strings = [&](const char* key) {
    const ojson& v = need(key);
    if (!v.is_array()) fail(ErrorKind::schema, std::string("manifest field '") + key + "' is not a list");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(ErrorKind::schema, std::string("manifest field '") + key + "' holds a non-string id");
      out.push_back(e.get<std::string>());
    }
    return out;
  };
  SplitManifest m;
  if (!need("set_name").is_string()) fail(ErrorKind::schema, "set_name must be a string");
  m.set_name = j["set_name"].get<std::string>();
  if (!need("seed").is_number_unsigned() && !j["seed"].is_number_integer())
    fail(ErrorKind::schema, "seed must be an integer");
  m.seed = j["seed"].get<std::uint64_t>();
  m.stratified = j.value("stratified", false);
  m.dataset_ids = strings("dataset_ids");
  m.train = strings("train");
  m.validation = strings("validation");
  m.test = strings("test");
  m.validate();
  return m;
}

void write_manifest(const SplitManifest& manifest, const std::string& path) {
  manifest.validate();
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write manifest " + path);
  out << manifest_to_json(manifest);
}

SplitManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "manifest not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

SplitManifest build_dataset(const DatasetBuildOptions& options) {
  require(options.image_side > 0, "image side must be positive");
  ViaParseOptions via;
  via.resolve_size = [&](const std::string& filename) {
    return probe_image_size((fs::path(options.image_root) / filename).string());
  };
  const auto images = parse_via_file(options.annotations_path, via);

  std::vector<std::string> ids;
  std::map<std::string, bool> strata;
  for (const auto& a : images) {
    ids.push_back(a.image_id);
    strata[a.image_id] = a.has_landslide();
  }
  const SplitManifest manifest =
      make_split(ids, options.counts, options.seed, options.set_name, options.stratify ? &strata : nullptr);

  fs::create_directories(DatasetPaths::images_dir(options.output_dir));
  std::vector<AnnotatedImage> scaled;
  for (const auto& a : images) {
    const Image src = read_image((fs::path(options.image_root) / a.source_path).string());
    if (src.width() != a.width || src.height() != a.height)
      spdlog::warn("{}: annotation frame {}x{} differs from image {}x{}; using the annotation frame", a.image_id,
                   a.width, a.height, src.width(), src.height());
    AnnotatedImage s = scale_annotations(a, options.image_side, options.image_side);
    s.source_path = a.image_id + ".png";
    write_image(DatasetPaths::image(options.output_dir, a.image_id),
                resize_image(src, options.image_side, options.image_side));
    scaled.push_back(std::move(s));
  }
  {
    std::ofstream out(DatasetPaths::annotations(options.output_dir), std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write dataset annotations");
    out << write_via(scaled);
  }
  write_manifest(manifest, options.output_dir + "/manifest.json");

  if (options.augment_preview > 0) {
    AugmentationConfig aug = options.augmentation;
    aug.copies = options.augment_preview;
    const std::set<std::string> train(manifest.train.begin(), manifest.train.end());
    for (const auto& s : scaled) {
      if (!train.count(s.image_id)) continue;
      const Image img = read_image(DatasetPaths::image(options.output_dir, s.image_id));
      std::vector<Mask> masks;
      for (const auto& r : s.regions) masks.push_back(rasterize_mask(r, s.width, s.height).mask);
      const auto outs = augment_pair(img, masks, aug, item_seed_for(s.image_id));
      for (std::size_t k = 0; k < outs.size(); ++k)
        write_image(options.output_dir + "/augmented/" + s.image_id + "_" + std::to_string(k) + ".png", outs[k].image);
    }
  }
  return manifest;
}

}  // namespace slidemask
