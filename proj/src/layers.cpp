#include "slidemask/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace slidemask {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using MapCR = Eigen::Map<const MatR>;

void ensure_grad(Parameter& p) {
  if (p.grad.numel() != p.value.numel()) p.grad = Tensor(p.value.shape());
}

void check_nchw(const Tensor& x, int channels, const char* who) {
  require(x.rank() == 4 && x.dim(1) == channels,
          std::string(who) + " expects [N," + std::to_string(channels) + ",H,W] input, got " + x.shape_string());
}

struct ConvGeometry {
  int c, h, w, k, stride, pad, ho, wo;
};

void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        const float* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, 0.0f);
            continue;
          }
          const float* xr = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.w) ? xr[ix] : 0.0f;
          }
        }
      }
}

void col2im(const float* cols, const ConvGeometry& g, float* x) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        float* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          float* xr = xc + static_cast<std::size_t>(iy) * g.w;
          const float* in = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) xr[ix] += in[ox];
          }
        }
      }
}

}  // namespace

Conv2d::Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, bool bias_)
    : in(in_ch), out(out_ch), kernel(k), stride(stride_), pad(pad_), has_bias(bias_) {
  weight.value = Tensor({out, in, k, k});
  if (has_bias) bias.value = Tensor({out});
}

Tensor Conv2d::forward(const Tensor& x) const {
  check_nchw(x, in, "conv");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const ConvGeometry g{in, h, w, kernel, stride, pad, out_size(h), out_size(w)};
  require(g.ho > 0 && g.wo > 0, "conv input too small");
  const int k = in * kernel * kernel, plane = g.ho * g.wo;
  const bool pointwise = kernel == 1 && stride == 1 && pad == 0;
  Tensor y({n, out, g.ho, g.wo});
  const MapCR wm(weight.value.data(), out, k);
  std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(k) * plane);
  for (int i = 0; i < n; ++i) {
    const float* xi = x.data() + static_cast<std::size_t>(i) * in * h * w;
    MapR yi(y.data() + static_cast<std::size_t>(i) * out * plane, out, plane);
    if (pointwise) {
      yi.noalias() = wm * MapCR(xi, in, plane);
    } else {
      im2col(xi, g, cols.data());
      yi.noalias() = wm * MapCR(cols.data(), k, plane);
    }
    if (has_bias) yi.colwise() += Eigen::Map<const Eigen::VectorXf>(bias.value.data(), out);
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool want_dx) {
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const ConvGeometry g{in, h, w, kernel, stride, pad, out_size(h), out_size(w)};
  const int k = in * kernel * kernel, plane = g.ho * g.wo;
  require(dy.rank() == 4 && dy.dim(0) == n && dy.dim(1) == out && dy.dim(2) == g.ho && dy.dim(3) == g.wo,
          "conv backward: gradient shape mismatch");
  const bool pointwise = kernel == 1 && stride == 1 && pad == 0;
  const bool grad_w = weight.trainable, grad_b = has_bias && bias.trainable;
  if (!grad_w && !grad_b && !want_dx) return {};
  if (grad_w) ensure_grad(weight);
  if (grad_b) ensure_grad(bias);

  Tensor dx = want_dx ? Tensor(x.shape()) : Tensor();
  const MapCR wm(weight.value.data(), out, k);
  std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(k) * plane);
  MatR dcols;
  for (int i = 0; i < n; ++i) {
    const float* xi = x.data() + static_cast<std::size_t>(i) * in * h * w;
    const MapCR dyi(dy.data() + static_cast<std::size_t>(i) * out * plane, out, plane);
    const float* colp = xi;
    if (!pointwise && grad_w) {
      im2col(xi, g, cols.data());
      colp = cols.data();
    }
    if (grad_w) MapR(weight.grad.data(), out, k).noalias() += dyi * MapCR(colp, k, plane).transpose();
    if (grad_b) Eigen::Map<Eigen::VectorXf>(bias.grad.data(), out) += dyi.rowwise().sum();
    if (want_dx) {
      float* dxi = dx.data() + static_cast<std::size_t>(i) * in * h * w;
      if (pointwise) {
        MapR(dxi, in, plane).noalias() = wm.transpose() * dyi;
      } else {
        dcols.noalias() = wm.transpose() * dyi;
        col2im(dcols.data(), g, dxi);
      }
    }
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, ParamList& list) {
  list.emplace_back(prefix + ".weight", &weight);
  if (has_bias) list.emplace_back(prefix + ".bias", &bias);
}

FrozenBatchNorm::FrozenBatchNorm(int c) : channels(c) {
  weight.value = Tensor({c}, 1.0f);
  bias.value = Tensor({c}, 0.0f);
  running_mean.value = Tensor({c}, 0.0f);
  running_var.value = Tensor({c}, 1.0f);
}

namespace {

constexpr double kBnEps = 1e-5;

std::pair<std::vector<float>, std::vector<float>> bn_affine(const FrozenBatchNorm& bn) {
  std::vector<float> scale(bn.channels), shift(bn.channels);
  for (int c = 0; c < bn.channels; ++c) {
    const double s = bn.weight.value[c] / std::sqrt(static_cast<double>(bn.running_var.value[c]) + kBnEps);
    scale[c] = static_cast<float>(s);
    shift[c] = static_cast<float>(bn.bias.value[c] - bn.running_mean.value[c] * s);
  }
  return {scale, shift};
}

}  // namespace

Tensor FrozenBatchNorm::forward(const Tensor& x) const {
  check_nchw(x, channels, "batch norm");
  const auto [scale, shift] = bn_affine(*this);
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale[c] + shift[c];
    }
  return y;
}

Tensor FrozenBatchNorm::backward(const Tensor& dy) const {
  const auto [scale, shift] = bn_affine(*this);
  Tensor dx(dy.shape());
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  for (int n = 0; n < dy.dim(0); ++n)
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dx[off + i] = dy[off + i] * scale[c];
    }
  return dx;
}

void FrozenBatchNorm::calibrate(const Tensor& x) {
  check_nchw(x, channels, "batch norm");
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(plane) * x.dim(0);
  for (int c = 0; c < channels; ++c) {
    double sum = 0, sq = 0;
    for (int n = 0; n < x.dim(0); ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += x[off + i];
        sq += static_cast<double>(x[off + i]) * x[off + i];
      }
    }
    const double mean = sum / count;
    running_mean.value[c] = static_cast<float>(mean);
    running_var.value[c] = static_cast<float>(std::max(sq / count - mean * mean, 0.0));
  }
}

void FrozenBatchNorm::collect(const std::string& prefix, ParamList& list) {
  list.emplace_back(prefix + ".weight", &weight);
  list.emplace_back(prefix + ".bias", &bias);
  list.emplace_back(prefix + ".running_mean", &running_mean);
  list.emplace_back(prefix + ".running_var", &running_var);
}

Linear::Linear(int in_f, int out_f) : in(in_f), out(out_f) {
  weight.value = Tensor({out, in});
  bias.value = Tensor({out});
}

Tensor Linear::forward(const Tensor& x) const {
  require(x.rank() == 2 && x.dim(1) == in, "linear expects [N," + std::to_string(in) + "], got " + x.shape_string());
  const int n = x.dim(0);
  Tensor y({n, out});
  MapR ym(y.data(), n, out);
  ym.noalias() = MapCR(x.data(), n, in) * MapCR(weight.value.data(), out, in).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.value.data(), out);
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy, bool want_dx) {
  const int n = x.dim(0);
  require(dy.rank() == 2 && dy.dim(0) == n && dy.dim(1) == out, "linear backward: gradient shape mismatch");
  const MapCR dym(dy.data(), n, out);
  if (weight.trainable) {
    ensure_grad(weight);
    MapR(weight.grad.data(), out, in).noalias() += dym.transpose() * MapCR(x.data(), n, in);
  }
  if (bias.trainable) {
    ensure_grad(bias);
    Eigen::Map<Eigen::RowVectorXf>(bias.grad.data(), out) += dym.colwise().sum();
  }
  if (!want_dx) return {};
  Tensor dx({n, in});
  MapR(dx.data(), n, in).noalias() = dym * MapCR(weight.value.data(), out, in);
  return dx;
}

void Linear::collect(const std::string& prefix, ParamList& list) {
  list.emplace_back(prefix + ".weight", &weight);
  list.emplace_back(prefix + ".bias", &bias);
}

ConvTranspose2x2::ConvTranspose2x2(int in_ch, int out_ch) : in(in_ch), out(out_ch) {
  weight.value = Tensor({in, out, 2, 2});
  bias.value = Tensor({out});
}

namespace {

// W[:, :, a, b] as an [in, out] matrix.
MatR tap(const Tensor& w, int in, int out, int a, int b) {
  MatR m(in, out);
  for (int c = 0; c < in; ++c)
    for (int o = 0; o < out; ++o) m(c, o) = w[((static_cast<std::size_t>(c) * out + o) * 2 + a) * 2 + b];
  return m;
}

}  // namespace

Tensor ConvTranspose2x2::forward(const Tensor& x) const {
  check_nchw(x, in, "transposed conv");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = h * w;
  Tensor y({n, out, 2 * h, 2 * w});
  MatR yab;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const MatR wab = tap(weight.value, in, out, a, b);
      for (int i = 0; i < n; ++i) {
        yab.noalias() = wab.transpose() * MapCR(x.data() + static_cast<std::size_t>(i) * in * plane, in, plane);
        for (int o = 0; o < out; ++o) {
          float* yo = y.data() + (static_cast<std::size_t>(i) * out + o) * 4 * plane;
          for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) yo[(2 * r + a) * 2 * w + 2 * c + b] = yab(o, r * w + c) + bias.value[o];
        }
      }
    }
  return y;
}

Tensor ConvTranspose2x2::backward(const Tensor& x, const Tensor& dy, bool want_dx) {
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = h * w;
  require(dy.rank() == 4 && dy.dim(1) == out && dy.dim(2) == 2 * h && dy.dim(3) == 2 * w,
          "transposed conv backward: gradient shape mismatch");
  if (weight.trainable) ensure_grad(weight);
  if (bias.trainable) ensure_grad(bias);
  Tensor dx = want_dx ? Tensor(x.shape()) : Tensor();
  MatR dyab(out, plane);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const MatR wab = tap(weight.value, in, out, a, b);
      MatR dwab = MatR::Zero(in, out);
      for (int i = 0; i < n; ++i) {
        for (int o = 0; o < out; ++o) {
          const float* dyo = dy.data() + (static_cast<std::size_t>(i) * out + o) * 4 * plane;
          for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) dyab(o, r * w + c) = dyo[(2 * r + a) * 2 * w + 2 * c + b];
        }
        const MapCR xi(x.data() + static_cast<std::size_t>(i) * in * plane, in, plane);
        if (weight.trainable) dwab.noalias() += xi * dyab.transpose();
        if (bias.trainable)
          for (int o = 0; o < out; ++o) bias.grad[o] += dyab.row(o).sum();
        if (want_dx) MapR(dx.data() + static_cast<std::size_t>(i) * in * plane, in, plane).noalias() += wab * dyab;
      }
      if (weight.trainable)
        for (int c = 0; c < in; ++c)
          for (int o = 0; o < out; ++o) weight.grad[((static_cast<std::size_t>(c) * out + o) * 2 + a) * 2 + b] += dwab(c, o);
    }
  return dx;
}

void ConvTranspose2x2::collect(const std::string& prefix, ParamList& list) {
  list.emplace_back(prefix + ".weight", &weight);
  list.emplace_back(prefix + ".bias", &bias);
}

Tensor relu(Tensor x) {
  for (auto& v : x.storage()) v = v < 0.0f ? 0.0f : v;  // NaN passes through
  return x;
}

Tensor relu_backward(const Tensor& y, Tensor dy) {
  for (std::size_t i = 0; i < dy.numel(); ++i)
    if (!(y[i] > 0.0f)) dy[i] = 0.0f;
  return dy;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

namespace {

template <typename Visit>
void pool_windows(const Tensor& x, int ho, int wo, Visit&& visit) {
  const int h = x.dim(2), w = x.dim(3);
  for (int nc = 0; nc < x.dim(0) * x.dim(1); ++nc) {
    const float* xp = x.data() + static_cast<std::size_t>(nc) * h * w;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        int arg = -1;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * 2 - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            if (xp[iy * w + ix] > best || arg < 0) {
              best = xp[iy * w + ix];
              arg = iy * w + ix;
            }
          }
        }
        visit(nc, oy * wo + ox, arg, best);
      }
  }
}

}  // namespace

Tensor max_pool_3x3s2(const Tensor& x) {
  require(x.rank() == 4, "max pool expects NCHW input");
  const int ho = (x.dim(2) - 1) / 2 + 1, wo = (x.dim(3) - 1) / 2 + 1;
  Tensor y({x.dim(0), x.dim(1), ho, wo});
  pool_windows(x, ho, wo, [&](int nc, int o, int, float v) { y[static_cast<std::size_t>(nc) * ho * wo + o] = v; });
  return y;
}

Tensor max_pool_3x3s2_backward(const Tensor& x, const Tensor& dy) {
  const int ho = dy.dim(2), wo = dy.dim(3);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor dx(x.shape());
  pool_windows(x, ho, wo, [&](int nc, int o, int arg, float) {
    dx[static_cast<std::size_t>(nc) * plane + arg] += dy[static_cast<std::size_t>(nc) * ho * wo + o];
  });
  return dx;
}

namespace {

template <typename F>
void nearest_pairs(int hi, int wi, int ho, int wo, F&& f) {
  for (int y = 0; y < ho; ++y) {
    const int sy = static_cast<int>(static_cast<long>(y) * hi / ho);
    for (int x = 0; x < wo; ++x) f(y * wo + x, sy * wi + static_cast<int>(static_cast<long>(x) * wi / wo));
  }
}

}  // namespace

Tensor upsample_nearest(const Tensor& x, int h, int w) {
  require(x.rank() == 4, "upsample expects NCHW input");
  Tensor y({x.dim(0), x.dim(1), h, w});
  const std::size_t in_plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3), out_plane = static_cast<std::size_t>(h) * w;
  for (int nc = 0; nc < x.dim(0) * x.dim(1); ++nc)
    nearest_pairs(x.dim(2), x.dim(3), h, w,
                  [&](int o, int i) { y[nc * out_plane + o] = x[nc * in_plane + i]; });
  return y;
}

Tensor upsample_nearest_backward(const Tensor& dy, int h, int w) {
  Tensor dx({dy.dim(0), dy.dim(1), h, w});
  const std::size_t in_plane = static_cast<std::size_t>(h) * w, out_plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  for (int nc = 0; nc < dy.dim(0) * dy.dim(1); ++nc)
    nearest_pairs(h, w, dy.dim(2), dy.dim(3),
                  [&](int o, int i) { dx[nc * in_plane + i] += dy[nc * out_plane + o]; });
  return dx;
}

void init_normal(Parameter& p, double stddev, std::uint64_t seed, const std::string& name) {
  Rng rng(seed, stable_hash(name));
  for (auto& v : p.value.storage()) v = static_cast<float>(rng.normal() * stddev);
}

void init_uniform(Parameter& p, double bound, std::uint64_t seed, const std::string& name) {
  Rng rng(seed, stable_hash(name));
  for (auto& v : p.value.storage()) v = static_cast<float>(rng.uniform(-bound, bound));
}

void init_constant(Parameter& p, float value) { p.value.fill(value); }

}  // namespace slidemask
