#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bnet/conv.hpp"
#include "bnet/rng.hpp"
#include "support/oracles.hpp"

using namespace bnet;

TEST_CASE("depthwise 1x1 reduces to the per-channel affine map") {
  Rng rng(21);
  auto x = oracle::random_tensor<double>({2, 3, 4, 5}, rng);
  DepthwiseKernel<double> kern(3, 1);
  const double gamma[3] = {0.5, -1.25, 2.0};
  const double beta[3] = {0.1, 0.0, -3.0};
  for (int c = 0; c < 3; ++c) {
    kern.w(c, 0, 0) = gamma[c];
    kern.bias[static_cast<std::size_t>(c)] = beta[c];
  }
  auto y = depthwise_conv2d(x, kern);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 5; ++j)
          CHECK(y.at(n, c, i, j) == gamma[c] * x.at(n, c, i, j) + beta[c]);
}

TEST_CASE("all-ones 3x3 kernel on a 3x3 ramp") {
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  DepthwiseKernel<double> kern(1, 3);
  for (int u = 0; u < 3; ++u)
    for (int v = 0; v < 3; ++v) kern.w(0, u, v) = 1.0;
  auto y = depthwise_conv2d(x, kern);
  CHECK(y.at(0, 0, 1, 1) == 45.0);
  CHECK(y.at(0, 0, 0, 0) == 12.0);
}

TEST_CASE("zero weights with bias 7 gives a constant output") {
  Rng rng(3);
  auto x = oracle::random_tensor<float>({1, 1, 5, 5}, rng);
  DepthwiseKernel<float> kern(1, 3);
  kern.bias[0] = 7.0f;
  auto y = depthwise_conv2d(x, kern);
  for (float v : y.values()) CHECK(v == 7.0f);
}

TEST_CASE("depthwise rejects even kernels and channel mismatches") {
  CHECK_THROWS_WITH_AS(DepthwiseKernel<float>(2, 4), doctest::Contains("odd"),
                       std::invalid_argument);
  Tensor<float> x({1, 2, 3, 3});
  DepthwiseKernel<float> kern(3, 3);
  CHECK_THROWS_AS(depthwise_conv2d(x, kern), std::invalid_argument);
}

TEST_CASE("depthwise forward matches the naive oracle across k and dilation") {
  Rng rng(77);
  for (int k : {1, 3, 5, 7}) {
    for (int d : {1, 2}) {
      auto x = oracle::random_tensor<double>(
          {rng.uniform_int(1, 3), rng.uniform_int(1, 4), rng.uniform_int(3, 9),
           rng.uniform_int(3, 9)},
          rng);
      DepthwiseKernel<double> kern(x.c(), k, d);
      for (auto& w : kern.weights) w = rng.uniform(-1.0, 1.0);
      for (auto& b : kern.bias) b = rng.uniform(-1.0, 1.0);
      auto got = depthwise_conv2d(x, kern);
      auto want = oracle::depthwise_conv(x, kern);
      CHECK(oracle::rel_diff(got, want) <= 1e-12);
    }
  }
}

TEST_CASE("depthwise backward: 1x1 closed form with all-ones upstream gradient") {
  Rng rng(5);
  auto x = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
  DepthwiseKernel<double> kern(2, 1);
  kern.w(0, 0, 0) = 1.5;
  kern.w(1, 0, 0) = -0.5;
  Tensor<double> gy(x.shape(), 1.0);
  auto g = depthwise_conv2d_backward(gy, x, kern);
  for (std::int64_t c = 0; c < 2; ++c) {
    CHECK(g.bias[static_cast<std::size_t>(c)] == doctest::Approx(2.0 * 3 * 3));
    double want = 0.0;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 3; ++j) want += x.at(n, c, i, j);
    CHECK(g.weights[static_cast<std::size_t>(c)] == doctest::Approx(want));
  }
}

TEST_CASE("depthwise backward matches central finite differences") {
  Rng rng(3);
  auto x = oracle::random_tensor<double>({2, 2, 5, 4}, rng);
  DepthwiseKernel<double> kern(2, 3, 2);
  for (auto& w : kern.weights) w = rng.uniform(-1.0, 1.0);
  for (auto& b : kern.bias) b = rng.uniform(-0.5, 0.5);
  auto r = oracle::random_tensor<double>(x.shape(), rng, 0.5, 1.5);

  const auto loss = [&]() {
    auto y = depthwise_conv2d(x, kern);
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) acc += r.data()[i] * y.data()[i];
    return acc;
  };
  auto g = depthwise_conv2d_backward(r, x, kern);
  CHECK(oracle::fd_rel_err(kern.weights, g.weights, loss) <= 1e-7);
  CHECK(oracle::fd_rel_err(kern.bias, g.bias, loss) <= 1e-7);
  CHECK(oracle::fd_rel_err(x.values(), g.input.values(), loss) <= 1e-7);
}

TEST_CASE("zero upstream gradient produces zero gradients") {
  Rng rng(11);
  auto x = oracle::random_tensor<float>({1, 2, 4, 4}, rng);
  DepthwiseKernel<float> kern(2, 3);
  for (auto& w : kern.weights) w = static_cast<float>(rng.uniform(-1.0, 1.0));
  Tensor<float> gy(x.shape(), 0.0f);
  auto g = depthwise_conv2d_backward(gy, x, kern);
  for (float v : g.weights) CHECK(v == 0.0f);
  for (float v : g.bias) CHECK(v == 0.0f);
  for (float v : g.input.values()) CHECK(v == 0.0f);
}

TEST_CASE("1x1 conv with permutation weights shuffles channels") {
  Rng rng(13);
  auto x = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
  ConvWeights<float> w(3, 3, 1);
  // output 0 <- input 2, output 1 <- input 0, output 2 <- input 1
  w.at(0, 2, 0, 0) = 1.0f;
  w.at(1, 0, 0, 0) = 1.0f;
  w.at(2, 1, 0, 0) = 1.0f;
  auto y = conv2d(x, w, 1, 0);
  const int from[3] = {2, 0, 1};
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
          CHECK(y.at(n, c, i, j) == x.at(n, from[c], i, j));
}

TEST_CASE("3x3 stride-2 pad-1 conv halves 224x224") {
  Tensor<float> x({1, 1, 224, 224}, 1.0f);
  ConvWeights<float> w(1, 1, 3);
  w.at(0, 0, 1, 1) = 1.0f;
  auto y = conv2d(x, w, 2, 1);
  CHECK(y.h() == 112);
  CHECK(y.w() == 112);
  CHECK(conv_out_dim(224, 3, 2, 1) == 112);
}

TEST_CASE("conv2d matches the naive 7-loop oracle") {
  Rng rng(11);
  auto x = oracle::random_tensor<float>({2, 3, 9, 8}, rng);
  ConvWeights<float> w(4, 3, 3);
  for (auto& v : w.w) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto got = conv2d(x, w, 2, 1);
  auto want = oracle::conv(x, w, 2, 1);
  CHECK(oracle::rel_diff(got, want) <= 1e-5);
}

TEST_CASE("conv2d backward matches central finite differences") {
  Rng rng(29);
  auto x = oracle::random_tensor<double>({2, 3, 6, 5}, rng);
  ConvWeights<double> w(2, 3, 3);
  for (auto& v : w.w) v = rng.uniform(-1.0, 1.0);
  Tensor<double> r({2, 2, 3, 3});
  for (auto& v : r.values()) v = rng.uniform(0.5, 1.5);

  const auto loss = [&]() {
    auto y = conv2d(x, w, 2, 1);
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) acc += r.data()[i] * y.data()[i];
    return acc;
  };
  auto g = conv2d_backward(r, x, w, 2, 1);
  CHECK(oracle::fd_rel_err(w.w, g.weights, loss) <= 1e-7);
  CHECK(oracle::fd_rel_err(x.values(), g.input.values(), loss) <= 1e-7);
}

TEST_CASE("conv2d rejects incompatible shapes") {
  Tensor<float> x({1, 2, 4, 4});
  ConvWeights<float> w(2, 3, 3);
  CHECK_THROWS_AS(conv2d(x, w, 1, 1), std::invalid_argument);
  ConvWeights<float> big(1, 2, 9);
  CHECK_THROWS_AS(conv2d(x, big, 1, 0), std::invalid_argument);
}

TEST_CASE("linearity of convolution in the input") {
  Rng rng(31);
  auto x = oracle::random_tensor<float>({1, 2, 6, 6}, rng);
  auto z = oracle::random_tensor<float>({1, 2, 6, 6}, rng);
  DepthwiseKernel<float> kern(2, 3);
  for (auto& w : kern.weights) w = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (int trial = 0; trial < 10; ++trial) {
    const float alpha = static_cast<float>(rng.uniform(-2.0, 2.0));
    const float beta = static_cast<float>(rng.uniform(-2.0, 2.0));
    auto mixed = add(scale(x, alpha), scale(z, beta));
    auto lhs = depthwise_conv2d(mixed, kern);
    auto rhs = add(scale(depthwise_conv2d(x, kern), alpha),
                   scale(depthwise_conv2d(z, kern), beta));
    CHECK(oracle::rel_diff(lhs, rhs) <= 1e-5);
  }
}

TEST_CASE("translation equivariance away from the border") {
  Rng rng(37);
  const int k = 3, d = 2;
  const int margin = d * (k - 1) / 2;
  auto x = oracle::random_tensor<double>({1, 1, 10, 10}, rng);
  // shift right/down by one pixel, zero fill
  Tensor<double> shifted(x.shape());
  for (std::int64_t i = 1; i < 10; ++i)
    for (std::int64_t j = 1; j < 10; ++j) shifted.at(0, 0, i, j) = x.at(0, 0, i - 1, j - 1);
  DepthwiseKernel<double> kern(1, k, d);
  for (auto& w : kern.weights) w = rng.uniform(-1.0, 1.0);
  auto y = depthwise_conv2d(x, kern);
  auto ys = depthwise_conv2d(shifted, kern);
  for (std::int64_t i = 1 + margin; i < 10 - margin; ++i)
    for (std::int64_t j = 1 + margin; j < 10 - margin; ++j)
      CHECK(ys.at(0, 0, i, j) == doctest::Approx(y.at(0, 0, i - 1, j - 1)).epsilon(1e-12));
}

TEST_CASE("receptive field: outputs beyond the kernel radius are untouched") {
  Rng rng(41);
  for (int k : {3, 5}) {
    for (int d : {1, 2}) {
      const int radius = d * (k - 1) / 2;
      auto x = oracle::random_tensor<double>({1, 1, 12, 12}, rng);
      DepthwiseKernel<double> kern(1, k, d);
      for (auto& w : kern.weights) w = rng.uniform(-1.0, 1.0);
      auto y0 = depthwise_conv2d(x, kern);
      Tensor<double> xp = x;
      const std::int64_t pi = 6, pj = 5;
      xp.at(0, 0, pi, pj) += 10.0;
      auto y1 = depthwise_conv2d(xp, kern);
      for (std::int64_t i = 0; i < 12; ++i)
        for (std::int64_t j = 0; j < 12; ++j) {
          const std::int64_t cheb = std::max(std::abs(i - pi), std::abs(j - pj));
          if (cheb > radius) CHECK(y1.at(0, 0, i, j) == y0.at(0, 0, i, j));
        }
    }
  }
}

TEST_CASE("optimized conv paths match the oracle on random small instances") {
  Rng rng(4242);
  for (int trial = 0; trial < 30; ++trial) {
    const Shape4 s{rng.uniform_int(1, 2), rng.uniform_int(1, 3), rng.uniform_int(4, 10),
                   rng.uniform_int(4, 10)};
    auto xd = oracle::random_tensor<double>(s, rng);
    auto xf = oracle::random_tensor<float>(s, rng);
    const int k = 2 * static_cast<int>(rng.uniform_int(0, 3)) + 1;
    const int d = static_cast<int>(rng.uniform_int(1, 2));
    DepthwiseKernel<double> kd(s.c, k, d);
    DepthwiseKernel<float> kf(s.c, k, d);
    for (std::size_t i = 0; i < kd.weights.size(); ++i) {
      kd.weights[i] = rng.uniform(-1.0, 1.0);
      kf.weights[i] = static_cast<float>(kd.weights[i]);
    }
    CHECK(oracle::rel_diff(depthwise_conv2d(xd, kd), oracle::depthwise_conv(xd, kd)) <= 1e-12);
    CHECK(oracle::rel_diff(depthwise_conv2d(xf, kf), oracle::depthwise_conv(xf, kf)) <= 1e-5);

    const int ck = 2 * static_cast<int>(rng.uniform_int(0, 1)) + 1;
    const int stride = static_cast<int>(rng.uniform_int(1, 2));
    const int pad = static_cast<int>(rng.uniform_int(0, 2));
    if (s.h + 2 * pad < ck || s.w + 2 * pad < ck) continue;
    ConvWeights<double> wd(rng.uniform_int(1, 4), s.c, ck);
    ConvWeights<float> wf(wd.c_out, s.c, ck);
    for (std::size_t i = 0; i < wd.w.size(); ++i) {
      wd.w[i] = rng.uniform(-1.0, 1.0);
      wf.w[i] = static_cast<float>(wd.w[i]);
    }
    CHECK(oracle::rel_diff(conv2d(xd, wd, stride, pad), oracle::conv(xd, wd, stride, pad)) <=
          1e-12);
    CHECK(oracle::rel_diff(conv2d(xf, wf, stride, pad), oracle::conv(xf, wf, stride, pad)) <=
          1e-5);
  }
}
