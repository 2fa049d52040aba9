#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "slidemask/error.hpp"

namespace slidemask {

/// Dense row-major float tensor. Image batches are NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == count(shape_), "tensor data does not match its shape");
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data, new shape with equal element count.
  Tensor reshaped(std::vector<int> shape) const {
    require(count(shape) == data_.size(), "reshape changes the element count");
    return Tensor(std::move(shape), data_);
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

/// A named weight with its gradient and optimizer state.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor velocity;
  bool trainable = false;

  void zero_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape());
    else grad.fill(0.0f);
  }
};

}  // namespace slidemask
