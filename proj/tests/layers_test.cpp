#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "slidemask/layers.hpp"

using namespace slidemask;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Central difference of loss(x) = <f(x), r> at a handful of coordinates.
void check_gradient(Tensor& x, const Tensor& analytic, const std::function<Tensor()>& f, const Tensor& r,
                    double tol = 2e-2) {
  for (std::size_t i = 0; i < x.numel(); i += std::max<std::size_t>(1, x.numel() / 23)) {
    const float keep = x[i];
    const float h = 1e-2f;
    x[i] = keep + h;
    const double up = dot(f(), r);
    x[i] = keep - h;
    const double down = dot(f(), r);
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    EXPECT_NEAR(analytic[i], numeric, tol * std::max(1.0, std::abs(numeric))) << "index " << i;
  }
}

}  // namespace

TEST(Conv2d, MatchesDirectSum) {
  Conv2d conv(2, 3, 3, 2, 1, true);
  conv.weight.value = random_tensor({3, 2, 3, 3}, 1);
  conv.bias.value = random_tensor({3}, 2);
  const Tensor x = random_tensor({2, 2, 7, 6}, 3);
  const Tensor y = conv.forward(x);
  ASSERT_EQ(y.shape(), (std::vector<int>{2, 3, 4, 3}));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double s = conv.bias.value[o];
          for (int c = 0; c < 2; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                s += conv.weight.value[((o * 2 + c) * 3 + ky) * 3 + kx] * x[((n * 2 + c) * 7 + iy) * 6 + ix];
              }
          EXPECT_NEAR(y[((n * 3 + o) * 4 + oy) * 3 + ox], s, 1e-5);
        }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, std::tuple{1, 1, 0}, std::tuple{1, 2, 0}, std::tuple{3, 2, 1}}) {
    Conv2d conv(3, 4, k, s, p, true);
    conv.weight.value = random_tensor({4, 3, k, k}, 10);
    conv.bias.value = random_tensor({4}, 11);
    conv.weight.trainable = conv.bias.trainable = true;
    Tensor x = random_tensor({2, 3, 5, 6}, 12);
    const Tensor r = random_tensor(conv.forward(x).shape(), 13);
    conv.weight.zero_grad();
    conv.bias.zero_grad();
    const Tensor dx = conv.backward(x, r, true);
    check_gradient(x, dx, [&] { return conv.forward(x); }, r);
    check_gradient(conv.weight.value, conv.weight.grad, [&] { return conv.forward(x); }, r);
    check_gradient(conv.bias.value, conv.bias.grad, [&] { return conv.forward(x); }, r);
  }
}

TEST(Conv2d, FrozenWeightsGetNoGradient) {
  Conv2d conv(2, 2, 3, 1, 1, false);
  conv.weight.value = random_tensor({2, 2, 3, 3}, 1);
  const Tensor x = random_tensor({1, 2, 4, 4}, 2);
  conv.backward(x, random_tensor({1, 2, 4, 4}, 3), true);
  EXPECT_TRUE(conv.weight.grad.empty());
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  Linear fc(5, 3);
  fc.weight.value = random_tensor({3, 5}, 1);
  fc.bias.value = random_tensor({3}, 2);
  fc.weight.trainable = fc.bias.trainable = true;
  Tensor x = random_tensor({4, 5}, 3);
  const Tensor r = random_tensor({4, 3}, 4);
  const Tensor dx = fc.backward(x, r, true);
  check_gradient(x, dx, [&] { return fc.forward(x); }, r);
  check_gradient(fc.weight.value, fc.weight.grad, [&] { return fc.forward(x); }, r);
  check_gradient(fc.bias.value, fc.bias.grad, [&] { return fc.forward(x); }, r);
}

TEST(ConvTranspose, ScattersEachInputToA2x2Block) {
  ConvTranspose2x2 up(1, 1);
  up.weight.value = Tensor({1, 1, 2, 2}, {1, 2, 3, 4});
  up.bias.value = Tensor({1}, {0.5f});
  const Tensor y = up.forward(Tensor({1, 1, 1, 2}, {1, 10}));
  EXPECT_EQ(y.storage(), (std::vector<float>{1.5f, 2.5f, 10.5f, 20.5f, 3.5f, 4.5f, 30.5f, 40.5f}));
}

TEST(ConvTranspose, GradientsMatchFiniteDifferences) {
  ConvTranspose2x2 up(3, 2);
  up.weight.value = random_tensor({3, 2, 2, 2}, 1);
  up.bias.value = random_tensor({2}, 2);
  up.weight.trainable = up.bias.trainable = true;
  Tensor x = random_tensor({2, 3, 3, 2}, 3);
  const Tensor r = random_tensor({2, 2, 6, 4}, 4);
  const Tensor dx = up.backward(x, r, true);
  check_gradient(x, dx, [&] { return up.forward(x); }, r);
  check_gradient(up.weight.value, up.weight.grad, [&] { return up.forward(x); }, r);
  check_gradient(up.bias.value, up.bias.grad, [&] { return up.forward(x); }, r);
}

TEST(MaxPool, ForwardAndBackward) {
  // Distinct values 0.1 apart so the finite-difference step never flips an argmax.
  Tensor x({1, 2, 5, 5});
  std::vector<int> order(50);
  std::iota(order.begin(), order.end(), 0);
  Rng(9).shuffle(order);
  for (int i = 0; i < 50; ++i) x[i] = 0.1f * order[i];
  const Tensor y = max_pool_3x3s2(x);
  ASSERT_EQ(y.shape(), (std::vector<int>{1, 2, 3, 3}));
  EXPECT_EQ(y[0], std::max({x[0], x[1], x[5], x[6]}));
  const Tensor r = random_tensor(y.shape(), 10);
  check_gradient(x, max_pool_3x3s2_backward(x, r), [&] { return max_pool_3x3s2(x); }, r);
}

TEST(FrozenBatchNorm, CalibrationNormalizes) {
  FrozenBatchNorm bn(3);
  const Tensor x = random_tensor({4, 3, 6, 6}, 5, 7.0);
  bn.calibrate(x);
  const Tensor y = bn.forward(x);
  for (int c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 36; ++i) {
        const double v = y[(n * 3 + c) * 36 + i];
        s += v;
        sq += v * v;
      }
    EXPECT_NEAR(s / 144, 0.0, 1e-4);
    EXPECT_NEAR(sq / 144, 1.0, 1e-3);
  }
}

TEST(Init, StreamsDependOnNameNotOrder) {
  Parameter a, b;
  a.value = Tensor({8});
  b.value = Tensor({8});
  init_normal(a, 1.0, 7, "x.weight");
  init_normal(b, 1.0, 7, "y.weight");
  Parameter a2;
  a2.value = Tensor({8});
  init_normal(a2, 1.0, 7, "x.weight");
  EXPECT_EQ(a.value, a2.value);
  EXPECT_NE(a.value, b.value);
}
