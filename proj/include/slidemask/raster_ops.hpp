#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "slidemask/raster.hpp"

namespace slidemask {

namespace detail {

template <typename T>
T from_real(double v) {
  if constexpr (std::is_integral_v<T>) {
    const double lo = static_cast<double>(std::numeric_limits<T>::min());
    const double hi = static_cast<double>(std::numeric_limits<T>::max());
    return static_cast<T>(std::clamp(std::floor(v + 0.5), lo, hi));
  } else {
    return static_cast<T>(v);
  }
}

}  // namespace detail

/// Bilinear resampling with half-pixel centers; edge samples clamp to the border.
/// Integral outputs are rounded half-up. Same-size input is returned unchanged.
template <typename T>
Raster<T> resize_bilinear(const Raster<T>& src, int width, int height) {
  require(src.width() > 0 && src.height() > 0, "cannot resize an empty raster");
  require(width > 0 && height > 0, "resize target must be positive");
  if (src.width() == width && src.height() == height) return src;
  Raster<T> out(width, height, src.channels());
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), src.height() - 1);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), src.width() - 1);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        const double top = (1.0 - wx) * src.at(x0, y0, c) + wx * src.at(x1, y0, c);
        const double bottom = (1.0 - wx) * src.at(x0, y1, c) + wx * src.at(x1, y1, c);
        out.at(x, y, c) = detail::from_real<T>((1.0 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

/// Nearest-neighbour resampling (pixel whose area contains the target center).
template <typename T>
Raster<T> resize_nearest(const Raster<T>& src, int width, int height) {
  require(width > 0 && height > 0, "resize target must be positive");
  if (src.width() == width && src.height() == height) return src;
  Raster<T> out(width, height, src.channels());
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * src.height() / height), src.height() - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * src.width() / width), src.width() - 1);
      for (int c = 0; c < src.channels(); ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

template <typename T>
Raster<T> flip_horizontal(const Raster<T>& src) {
  Raster<T> out(src.width(), src.height(), src.channels());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) out.at(x, y, c) = src.at(src.width() - 1 - x, y, c);
  return out;
}

}  // namespace slidemask
