#pragma once

// Reference RoI Align values computed from the continuous feature surface.
// The surface is written as a sum of tent functions centered on the cells,
// with coordinates clamped to the outer centers, which is a different route
// to the same interpolant the library builds from neighbour taps.

#include <algorithm>
#include <cmath>
#include <vector>

#include "slidemask/roi_align.hpp"

namespace oracle {

inline double tent(double d) { return std::max(0.0, 1.0 - std::abs(d)); }

/// Surface value at continuous pixel position (y, x).
inline double surface(const slidemask::FeatureGrid& f, double y, double x, int c) {
  const double yc = std::clamp(y, 0.5, f.height() - 0.5);
  const double xc = std::clamp(x, 0.5, f.width() - 0.5);
  double v = 0;
  for (int r = 0; r < f.height(); ++r) {
    const double wy = tent(yc - (r + 0.5));
    if (wy == 0) continue;
    for (int q = 0; q < f.width(); ++q) v += wy * tent(xc - (q + 0.5)) * f.at(q, r, c);
  }
  return v;
}

struct BinExtent {
  double y0, y1, x0, x1;  // pixel coordinates
};

inline BinExtent bin_extent(const slidemask::FeatureGrid& f, const slidemask::Box& b, int out_h, int out_w, int i,
                            int j) {
  const double bh = (b.y2 - b.y1) * f.height() / out_h, bw = (b.x2 - b.x1) * f.width() / out_w;
  const double y0 = b.y1 * f.height() + i * bh, x0 = b.x1 * f.width() + j * bw;
  return {y0, y0 + bh, x0, x0 + bw};
}

/// Dense oversampling: n x n midpoint samples per bin.
inline double dense_bin_mean(const slidemask::FeatureGrid& f, const slidemask::Box& b, int out_h, int out_w, int i,
                             int j, int c, int n = 100) {
  const BinExtent e = bin_extent(f, b, out_h, out_w, i, j);
  double s = 0;
  for (int a = 0; a < n; ++a)
    for (int d = 0; d < n; ++d)
      s += surface(f, e.y0 + (a + 0.5) * (e.y1 - e.y0) / n, e.x0 + (d + 0.5) * (e.x1 - e.x0) / n, c);
  return s / (static_cast<double>(n) * n);
}

/// Exact integral over [a, b] of t -> tent(clamp(t, 0.5, extent - 0.5) - center).
/// The integrand is piecewise linear, so the trapezoid rule between its
/// breakpoints is exact.
inline double tent_integral(double a, double b, double center, int extent) {
  auto g = [&](double t) { return tent(std::clamp(t, 0.5, extent - 0.5) - center); };
  std::vector<double> pts = {a, b};
  for (double p : {0.5, extent - 0.5, center - 1, center, center + 1})
    if (p > a && p < b) pts.push_back(p);
  std::sort(pts.begin(), pts.end());
  double s = 0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) s += 0.5 * (g(pts[k]) + g(pts[k + 1])) * (pts[k + 1] - pts[k]);
  return s;
}

/// Closed-form bin mean of the surface (separable tent integrals).
inline double exact_bin_mean(const slidemask::FeatureGrid& f, const slidemask::Box& b, int out_h, int out_w, int i,
                             int j, int c) {
  const BinExtent e = bin_extent(f, b, out_h, out_w, i, j);
  double s = 0;
  for (int r = 0; r < f.height(); ++r) {
    const double iy = tent_integral(e.y0, e.y1, r + 0.5, f.height());
    if (iy == 0) continue;
    for (int q = 0; q < f.width(); ++q) s += iy * tent_integral(e.x0, e.x1, q + 0.5, f.width()) * f.at(q, r, c);
  }
  return s / ((e.y1 - e.y0) * (e.x1 - e.x0));
}

}  // namespace oracle
