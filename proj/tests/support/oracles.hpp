#pragma once

// Test-only reference implementations: direct loops, no shared code with the
// optimized kernels they check.

#include <cmath>
#include <cstdint>
#include <vector>

#include "bnet/conv.hpp"
#include "bnet/rng.hpp"
#include "bnet/tensor.hpp"

namespace oracle {

// Plain nested-loop depthwise convolution, stride 1, same padding.
template <typename T>
bnet::Tensor<T> depthwise_conv(const bnet::Tensor<T>& x, const bnet::DepthwiseKernel<T>& kern) {
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int k = kern.k, d = kern.dilation;
  const int half = k / 2;
  bnet::Tensor<T> y(x.shape());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          T acc = kern.bias[static_cast<std::size_t>(c)];
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const std::int64_t ii = i + static_cast<std::int64_t>(d) * (u - half);
              const std::int64_t jj = j + static_cast<std::int64_t>(d) * (v - half);
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              acc += kern.w(c, u, v) * x.at(n, c, ii, jj);
            }
          y.at(n, c, i, j) = acc;
        }
  return y;
}

// Plain 7-loop standard convolution (cross-correlation, zero padding).
template <typename T>
bnet::Tensor<T> conv(const bnet::Tensor<T>& x, const bnet::ConvWeights<T>& w, int stride,
                     int padding) {
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::int64_t OH = (H + 2 * padding - w.k) / stride + 1;
  const std::int64_t OW = (W + 2 * padding - w.k) / stride + 1;
  bnet::Tensor<T> y({N, w.c_out, OH, OW});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oc = 0; oc < w.c_out; ++oc)
      for (std::int64_t oi = 0; oi < OH; ++oi)
        for (std::int64_t oj = 0; oj < OW; ++oj) {
          T acc = T(0);
          for (std::int64_t ic = 0; ic < C; ++ic)
            for (int u = 0; u < w.k; ++u)
              for (int v = 0; v < w.k; ++v) {
                const std::int64_t ii = oi * stride - padding + u;
                const std::int64_t jj = oj * stride - padding + v;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                acc += w.at(oc, ic, u, v) * x.at(n, ic, ii, jj);
              }
          y.at(n, oc, oi, oj) = acc;
        }
  return y;
}

// Max absolute difference scaled by the oracle's max magnitude.
template <typename T>
double rel_diff(const bnet::Tensor<T>& got, const bnet::Tensor<T>& want) {
  double max_diff = 0.0, max_mag = 0.0;
  for (std::int64_t i = 0; i < want.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(got.data()[i]) -
                                           static_cast<double>(want.data()[i])));
    max_mag = std::max(max_mag, std::abs(static_cast<double>(want.data()[i])));
  }
  return max_diff / (max_mag + 1e-300);
}

template <typename T>
double rel_diff(const std::vector<T>& got, const std::vector<T>& want) {
  double max_diff = 0.0, max_mag = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(got[i]) -
                                           static_cast<double>(want[i])));
    max_mag = std::max(max_mag, std::abs(static_cast<double>(want[i])));
  }
  return max_diff / (max_mag + 1e-300);
}

// Norm-based relative error between an analytic gradient and a central
// finite difference of `f`, differencing every coordinate of `theta`.
template <typename T, typename F>
double fd_rel_err(std::vector<T>& theta, const std::vector<T>& analytic, F&& f,
                  double step = 1e-6) {
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const T saved = theta[i];
    theta[i] = static_cast<T>(static_cast<double>(saved) + step);
    const double up = f();
    theta[i] = static_cast<T>(static_cast<double>(saved) - step);
    const double down = f();
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double d = static_cast<double>(analytic[i]) - numeric;
    diff2 += d * d;
    a2 += static_cast<double>(analytic[i]) * static_cast<double>(analytic[i]);
    n2 += numeric * numeric;
  }
  return std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(n2) + 1e-12);
}

template <typename T>
bnet::Tensor<T> random_tensor(bnet::Shape4 shape, bnet::Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  bnet::Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace oracle
