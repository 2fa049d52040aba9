#pragma once

// Test-only reference implementations, deliberately built on different
// formulations from the library code they check.

#include <cmath>
#include <vector>

#include "slidemask/annotation.hpp"
#include "slidemask/raster.hpp"
#include "slidemask/rng.hpp"

namespace oracle {

/// Even-odd membership via winding-number parity (sum of subtended angles).
inline bool inside_by_winding(const slidemask::Polygon& poly, double px, double py) {
  double total = 0.0;
  const auto& v = poly.vertices;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    const double ax = a.x - px, ay = a.y - py, bx = b.x - px, by = b.y - py;
    total += std::atan2(ax * by - ay * bx, ax * bx + ay * by);
  }
  const long winding = std::lround(total / (2.0 * M_PI));
  return (winding % 2) != 0;
}

/// Per-point crossing test (ray towards +x) with the half-open boundary rule:
/// an edge counts when exactly one endpoint lies strictly below the point.
inline bool inside_by_crossings(const slidemask::Polygon& poly, double px, double py) {
  bool inside = false;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > py) == (v[j].y > py)) continue;
    const double t = (py - v[i].y) / (v[j].y - v[i].y);
    if (px < v[i].x + t * (v[j].x - v[i].x)) inside = !inside;
  }
  return inside;
}

/// Boundary-exact per-pixel reference: crossing test at every pixel center.
inline slidemask::Mask rasterize_per_pixel(const slidemask::Polygon& poly, int width, int height) {
  slidemask::Mask m(width, height, 1, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.at(x, y) = inside_by_crossings(poly, x + 0.5, y + 0.5);
  return m;
}

/// Winding-parity reference; only valid where no pixel center touches an edge.
inline slidemask::Mask rasterize_by_winding(const slidemask::Polygon& poly, int width, int height) {
  slidemask::Mask m(width, height, 1, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.at(x, y) = inside_by_winding(poly, x + 0.5, y + 0.5);
  return m;
}

/// Random simple or self-intersecting polygon with non-integer vertices so no
/// pixel center lands on an edge.
inline slidemask::Polygon random_polygon(slidemask::Rng& rng, int side) {
  slidemask::Polygon p;
  const int n = 3 + static_cast<int>(rng.below(8));
  for (int i = 0; i < n; ++i) p.vertices.push_back({rng.uniform(0.0, side), rng.uniform(0.0, side)});
  return p;
}

}  // namespace oracle
