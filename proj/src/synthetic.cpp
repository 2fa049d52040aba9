#include "slidemask/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "fsutil.hpp"
#include "slidemask/image_io.hpp"
#include "slidemask/rng.hpp"

namespace slidemask {

namespace {

struct Rgb {
  double r, g, b;
};

// Smooth noise in [-1, 1]: bilinear upsampling of a coarse random lattice.
std::vector<double> value_noise(int side, int cells, Rng& rng) {
  std::vector<double> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
  for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(side) * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double fy = static_cast<double>(y) * cells / side, fx = static_cast<double>(x) * cells / side;
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const double ty = fy - y0, tx = fx - x0;
      auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * (cells + 1) + xx]; };
      out[static_cast<std::size_t>(y) * side + x] = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                                                    ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
    }
  return out;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void paint(Image& img, const Mask& mask, Rgb base, double texture, Rng& rng) {
  const auto noise = value_noise(img.width(), 12, rng);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (!mask.at(x, y)) continue;
      const double n = texture * noise[static_cast<std::size_t>(y) * img.width() + x] + rng.uniform(-6, 6);
      img.at(x, y, 0) = clamp_byte(base.r + n);
      img.at(x, y, 1) = clamp_byte(base.g + n);
      img.at(x, y, 2) = clamp_byte(base.b + n);
    }
}

// Star-shaped blob around (cx, cy).
Polygon blob(double cx, double cy, double radius, int vertices, double jitter, Rng& rng) {
  Polygon p;
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  const double stretch = rng.uniform(0.7, 1.3);
  for (int i = 0; i < vertices; ++i) {
    const double a = phase + 2 * std::numbers::pi * i / vertices;
    const double r = radius * rng.uniform(1 - jitter, 1 + jitter);
    p.vertices.push_back({cx + r * std::cos(a) * stretch, cy + r * std::sin(a) / stretch});
  }
  return p;
}

Polygon rectangle(double x0, double y0, double w, double h) {
  return Polygon{{{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}}};
}

bool overlaps(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.pixels()[i] && b.pixels()[i]) return true;
  return false;
}

Rgb hsv(double h, double sat, double val) {
  h = std::fmod(h, 360.0) / 60.0;
  const double c = val * sat, x = c * (1 - std::abs(std::fmod(h, 2.0) - 1)), m = val - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {255 * (r + m), 255 * (g + m), 255 * (b + m)};
}

}  // namespace

SourceScene source_scene(std::uint64_t seed, int index, int side, int num_classes) {
  require(side >= 32 && num_classes >= 1, "source scenes need side >= 32 and at least one class");
  Rng rng(seed ^ 0x50c0ULL, static_cast<std::uint64_t>(index));
  const double s = side;
  SourceScene out;
  Image& img = out.image;
  img = Image(side, side, 3);
  const auto coarse = value_noise(side, 3 + static_cast<int>(rng.below(4)), rng);
  const Rgb ground = hsv(rng.uniform(0, 360), rng.uniform(0.1, 0.5), rng.uniform(0.3, 0.7));
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double n = 25 * coarse[static_cast<std::size_t>(y) * side + x] + rng.uniform(-8, 8);
      img.at(x, y, 0) = clamp_byte(ground.r + n);
      img.at(x, y, 1) = clamp_byte(ground.g + n);
      img.at(x, y, 2) = clamp_byte(ground.b + n);
    }

  constexpr int kShapes = 5;
  const int hues = (num_classes + kShapes - 1) / kShapes;
  Mask occupied(side, side, 1);
  const int wanted = 1 + static_cast<int>(rng.below(3));
  for (int tries = 0; tries < 12 && static_cast<int>(out.masks.size()) < wanted; ++tries) {
    const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    const double r = s * rng.uniform(0.08, 0.22);
    const double cx = rng.uniform(r, s - r), cy = rng.uniform(r, s - r);
    Polygon p;
    switch (cls % kShapes) {
      case 0: p = blob(cx, cy, r, 24, 0.0, rng); break;
      case 1: p = rectangle(cx - r, cy - 0.7 * r, 2 * r, 1.4 * r); break;
      case 2: p = Polygon{{{cx, cy - r}, {cx + r, cy + r}, {cx - r, cy + r}}}; break;
      case 3: p = blob(cx, cy, r, 12, 0.35, rng); break;
      default: p = Polygon{{{cx, cy - r}, {cx + r, cy}, {cx, cy + r}, {cx - r, cy}}}; break;
    }
    const RasterResult m = rasterize_polygon(p, side, side);
    if (m.degenerate || count_set(m.mask) < 16 || overlaps(m.mask, occupied)) continue;
    const Rgb color = hsv(360.0 * (cls / kShapes) / hues + rng.uniform(-6, 6), rng.uniform(0.5, 0.9),
                          rng.uniform(0.55, 0.95));
    paint(img, m.mask, color, 10, rng);
    for (std::size_t i = 0; i < m.mask.size(); ++i) occupied.pixels()[i] |= m.mask.pixels()[i];
    out.masks.push_back(m.mask);
    out.classes.push_back(cls + 1);
  }
  return out;
}

SyntheticScene synthetic_scene(const SyntheticOptions& o, int index) {
  require(o.side >= 32, "synthetic images need a side of at least 32");
  require(index >= 0 && index < o.count, "synthetic scene index out of range");
  Rng rng(o.seed, static_cast<std::uint64_t>(index) + 1);
  const int side = o.side;
  const double s = side;

  SyntheticScene scene;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%03d", index);
  auto& a = scene.annotation;
  a.image_id = id;
  a.source_path = a.image_id + ".png";
  a.width = a.height = side;

  // terrain: green-grey ground with two octaves of noise
  Image& img = scene.image;
  img = Image(side, side, 3);
  const auto coarse = value_noise(side, 4, rng);
  const auto fine = value_noise(side, 16, rng);
  const Rgb ground{rng.uniform(70, 95), rng.uniform(105, 130), rng.uniform(60, 80)};
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * side + x;
      const double n = 22 * coarse[i] + 10 * fine[i] + rng.uniform(-5, 5);
      img.at(x, y, 0) = clamp_byte(ground.r + n);
      img.at(x, y, 1) = clamp_byte(ground.g + n);
      img.at(x, y, 2) = clamp_byte(ground.b + 0.6 * n);
    }

  Mask occupied(side, side, 1);
  auto place = [&](const Polygon& p, ClassLabel label, Rgb color, double texture) {
    Region r{p, label};
    const RasterResult m = rasterize_mask(r, side, side);
    if (m.degenerate || count_set(m.mask) == 0 || overlaps(m.mask, occupied)) return false;
    paint(img, m.mask, color, texture, rng);
    for (std::size_t i = 0; i < m.mask.size(); ++i) occupied.pixels()[i] |= m.mask.pixels()[i];
    a.regions.push_back(std::move(r));
    return true;
  };

  const bool landslide = index < o.count - o.negatives;
  if (landslide) {
    const double radius = s * rng.uniform(0.14, 0.24);
    const double cx = rng.uniform(radius * 1.3, s - radius * 1.3);
    const double cy = rng.uniform(radius * 1.3, s - radius * 1.3);
    place(blob(cx, cy, radius, 14, 0.25, rng), ClassLabel::landslide,
          {rng.uniform(165, 190), rng.uniform(110, 130), rng.uniform(70, 90)}, 18);
  }
  if (o.distractors) {
    const int n = 1 + static_cast<int>(rng.below(2));
    for (int k = 0, tries = 0; k < n && tries < 20; ++tries) {
      const int kind = static_cast<int>(rng.below(3));
      bool ok = false;
      if (kind == 0) {
        const double r = s * rng.uniform(0.08, 0.14);
        ok = place(blob(rng.uniform(r, s - r), rng.uniform(r, s - r), r, 18, 0.1, rng), ClassLabel::water_body,
                   {rng.uniform(40, 60), rng.uniform(70, 90), rng.uniform(140, 170)}, 8);
      } else if (kind == 1) {
        const double w = s * rng.uniform(0.08, 0.16), h = s * rng.uniform(0.08, 0.16);
        ok = place(rectangle(rng.uniform(0, s - w), rng.uniform(0, s - h), w, h), ClassLabel::building,
                   {rng.uniform(170, 200), rng.uniform(170, 200), rng.uniform(170, 200)}, 4);
      } else {
        const double r = s * rng.uniform(0.08, 0.14);
        ok = place(blob(rng.uniform(r, s - r), rng.uniform(r, s - r), r, 12, 0.3, rng), ClassLabel::vegetation,
                   {rng.uniform(25, 40), rng.uniform(70, 90), rng.uniform(25, 40)}, 12);
      }
      k += ok;
    }
  }
  return scene;
}

std::vector<AnnotatedImage> write_synthetic_dataset(const SyntheticOptions& o, const std::string& out_dir) {
  require(o.count >= 1, "synthetic dataset needs at least one image");
  require(o.negatives >= 0 && o.negatives <= o.count, "negatives must be in 0..count");
  std::filesystem::create_directories(out_dir + "/images");
  std::vector<AnnotatedImage> all;
  for (int i = 0; i < o.count; ++i) {
    SyntheticScene scene = synthetic_scene(o, i);
    write_image(out_dir + "/images/" + scene.annotation.source_path, scene.image);
    all.push_back(std::move(scene.annotation));
  }
  detail::write_text(out_dir + "/annotations.json", write_via(all));
  return all;
}

}  // namespace slidemask
