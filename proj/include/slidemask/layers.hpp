#pragma once

#include <string>
#include <utility>
#include <vector>

#include "slidemask/rng.hpp"
#include "slidemask/tensor.hpp"

namespace slidemask {

using ParamList = std::vector<std::pair<std::string, Parameter*>>;

// Layers are stateless in forward; training code keeps the inputs it needs and
// hands them back to backward, so a trained model can be shared for inference.

/// 2-D convolution on NCHW input. Weight layout [out, in, k, k].
struct Conv2d {
  int in = 0, out = 0, kernel = 1, stride = 1, pad = 0;
  bool has_bias = false;
  Parameter weight, bias;

  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, bool bias_);

  int out_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
  Tensor forward(const Tensor& x) const;
  /// Accumulates parameter gradients if trainable; returns dx if want_dx.
  Tensor backward(const Tensor& x, const Tensor& dy, bool want_dx);
  void collect(const std::string& prefix, ParamList& out_list);
};

/// Batch norm with fixed statistics: y = (x - mean) / sqrt(var + eps) * w + b.
struct FrozenBatchNorm {
  int channels = 0;
  Parameter weight, bias, running_mean, running_var;

  FrozenBatchNorm() = default;
  explicit FrozenBatchNorm(int c);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& dy) const;
  /// Sets the statistics from the batch x so the output is normalized.
  void calibrate(const Tensor& x);
  void collect(const std::string& prefix, ParamList& out_list);
};

/// Fully connected layer on [N, in]. Weight layout [out, in].
struct Linear {
  int in = 0, out = 0;
  Parameter weight, bias;

  Linear() = default;
  Linear(int in_f, int out_f);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy, bool want_dx);
  void collect(const std::string& prefix, ParamList& out_list);
};

/// 2x2 stride-2 transposed convolution. Weight layout [in, out, 2, 2].
struct ConvTranspose2x2 {
  int in = 0, out = 0;
  Parameter weight, bias;

  ConvTranspose2x2() = default;
  ConvTranspose2x2(int in_ch, int out_ch);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy, bool want_dx);
  void collect(const std::string& prefix, ParamList& out_list);
};

Tensor relu(Tensor x);
/// dy masked where the forward output was zero.
Tensor relu_backward(const Tensor& y, Tensor dy);
void add_inplace(Tensor& a, const Tensor& b);

/// 3x3 stride-2 pad-1 max pooling.
Tensor max_pool_3x3s2(const Tensor& x);
Tensor max_pool_3x3s2_backward(const Tensor& x, const Tensor& dy);

/// Nearest-neighbour resize of an NCHW tensor to h x w.
Tensor upsample_nearest(const Tensor& x, int h, int w);
Tensor upsample_nearest_backward(const Tensor& dy, int h, int w);

// Initializers draw from a stream derived from the tensor name, so results do
// not depend on the order tensors are visited.
void init_normal(Parameter& p, double stddev, std::uint64_t seed, const std::string& name);
void init_uniform(Parameter& p, double bound, std::uint64_t seed, const std::string& name);
void init_constant(Parameter& p, float value);

}  // namespace slidemask
