#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnet/tensor.hpp"

namespace bnet {

inline std::int64_t conv_out_dim(std::int64_t in, int k, int stride, int padding) {
  const std::int64_t out = (in + 2 * padding - k) / stride + 1;
  return out;
}

// Per-channel k x k filter bank with bias, stride 1, zero "same" padding
// p = dilation * (k - 1) / 2. k must be odd so same padding exists exactly.
template <typename T>
struct DepthwiseKernel {
  std::int64_t channels = 0;
  int k = 0;
  int dilation = 1;
  std::vector<T> weights;  // (channels, k, k)
  std::vector<T> bias;     // (channels)

  DepthwiseKernel() = default;

  DepthwiseKernel(std::int64_t channels_, int k_, int dilation_ = 1)
      : channels(channels_), k(k_), dilation(dilation_) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("kernel size must be odd");
    if (dilation < 1) throw std::invalid_argument("dilation must be positive");
    if (channels < 1) throw std::invalid_argument("depthwise kernel needs channels >= 1");
    weights.assign(static_cast<std::size_t>(channels) * k * k, T(0));
    bias.assign(static_cast<std::size_t>(channels), T(0));
  }

  int padding() const { return dilation * (k - 1) / 2; }

  T& w(std::int64_t c, int u, int v) {
    return weights[static_cast<std::size_t>((c * k + u) * k + v)];
  }
  const T& w(std::int64_t c, int u, int v) const {
    return weights[static_cast<std::size_t>((c * k + u) * k + v)];
  }

  // Center tap 1, everything else 0: the exact analogue of gamma=1, beta=0.
  static DepthwiseKernel identity(std::int64_t channels, int k, int dilation = 1) {
    DepthwiseKernel kern(channels, k, dilation);
    const int mid = k / 2;
    for (std::int64_t c = 0; c < channels; ++c) kern.w(c, mid, mid) = T(1);
    return kern;
  }
};

namespace detail {

template <typename T>
void check_depthwise(const Tensor<T>& x, const DepthwiseKernel<T>& kern) {
  if (kern.k < 1 || kern.k % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (x.c() != kern.channels) {
    throw std::invalid_argument("depthwise_conv2d: channel mismatch, input has " +
                                std::to_string(x.c()) + " channels, kernel has " +
                                std::to_string(kern.channels));
  }
  if (x.h() < 1 || x.w() < 1) throw std::invalid_argument("depthwise_conv2d: empty spatial dims");
}

}  // namespace detail

// Depth-wise cross-correlation, stride 1, zero padding, output shape ==
// input shape. Out-of-bounds taps read zero. Taps are swept row-wise so the
// inner loops vectorize; each output element still accumulates bias first
// and then the valid taps in ascending (u, v) order, the same sequence as a
// per-pixel loop.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const DepthwiseKernel<T>& kern) {
  detail::check_depthwise(x, kern);
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int k = kern.k, d = kern.dilation, p = kern.padding();
  Tensor<T> y(x.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* xc = x.data() + (n * C + c) * H * W;
      T* yc = y.data() + (n * C + c) * H * W;
      const T* wc = kern.weights.data() + c * k * k;
      const T b = kern.bias[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < H; ++i) {
        T* yrow = yc + i * W;
        for (std::int64_t j = 0; j < W; ++j) yrow[j] = b;
        for (int u = 0; u < k; ++u) {
          const std::int64_t ii = i - p + static_cast<std::int64_t>(d) * u;
          if (ii < 0 || ii >= H) continue;
          const T* xrow = xc + ii * W;
          for (int v = 0; v < k; ++v) {
            const std::int64_t jo = -p + static_cast<std::int64_t>(d) * v;
            const std::int64_t j0 = jo < 0 ? -jo : 0;
            const std::int64_t j1 = jo > 0 ? W - jo : W;
            const T a = wc[u * k + v];
            const T* xs = xrow + jo;
            for (std::int64_t j = j0; j < j1; ++j) yrow[j] += a * xs[j];
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
struct DepthwiseGrads {
  Tensor<T> input;         // dL/dx
  std::vector<T> weights;  // dL/dw, (c, k, k)
  std::vector<T> bias;     // dL/dbias, (c)
};

// Gradients of L = sum(grad_y . y) for the forward map above.
template <typename T>
DepthwiseGrads<T> depthwise_conv2d_backward(const Tensor<T>& grad_y, const Tensor<T>& x,
                                            const DepthwiseKernel<T>& kern) {
  detail::check_depthwise(x, kern);
  detail::require_same_shape(grad_y.shape(), x.shape(), "depthwise_conv2d_backward");
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const int k = kern.k, d = kern.dilation, p = kern.padding();

  DepthwiseGrads<T> g;
  g.input = Tensor<T>(x.shape());
  g.weights.assign(kern.weights.size(), T(0));
  g.bias.assign(kern.bias.size(), T(0));

  // Bias and weight gradients accumulate per channel and per tap over
  // (n, i, j) in index order, matching the reduction-order contract of the
  // affine recovery. The k*k tap sums run as independent accumulators over
  // one sweep of the data.
  std::vector<T> wsum(static_cast<std::size_t>(k) * k);
  for (std::int64_t c = 0; c < C; ++c) {
    T bsum = T(0);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* gc = grad_y.data() + (n * C + c) * H * W;
      for (std::int64_t i = 0; i < H * W; ++i) bsum += gc[i];
    }
    g.bias[static_cast<std::size_t>(c)] = bsum;

    std::fill(wsum.begin(), wsum.end(), T(0));
    for (std::int64_t n = 0; n < N; ++n) {
      const T* gc = grad_y.data() + (n * C + c) * H * W;
      const T* xc = x.data() + (n * C + c) * H * W;
      for (std::int64_t i = 0; i < H; ++i) {
        const T* grow = gc + i * W;
        for (int u = 0; u < k; ++u) {
          const std::int64_t ii = i - p + static_cast<std::int64_t>(d) * u;
          if (ii < 0 || ii >= H) continue;
          const T* xrow = xc + ii * W;
          for (int v = 0; v < k; ++v) {
            const std::int64_t jo = -p + static_cast<std::int64_t>(d) * v;
            const std::int64_t j0 = jo < 0 ? -jo : 0;
            const std::int64_t j1 = jo > 0 ? W - jo : W;
            const T* xs = xrow + jo;
            T acc = T(0);
            for (std::int64_t j = j0; j < j1; ++j) acc += grow[j] * xs[j];
            wsum[static_cast<std::size_t>(u * k + v)] += acc;
          }
        }
      }
    }
    std::copy(wsum.begin(), wsum.end(), g.weights.begin() + c * k * k);
  }

  // Input gradient: scatter each grad_y row through the kernel taps.
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* gc = grad_y.data() + (n * C + c) * H * W;
      T* gx = g.input.data() + (n * C + c) * H * W;
      const T* wc = kern.weights.data() + c * k * k;
      for (std::int64_t i = 0; i < H; ++i) {
        const T* grow = gc + i * W;
        for (int u = 0; u < k; ++u) {
          const std::int64_t a = i - p + static_cast<std::int64_t>(d) * u;
          if (a < 0 || a >= H) continue;
          T* gxrow = gx + a * W;
          for (int v = 0; v < k; ++v) {
            const std::int64_t jo = -p + static_cast<std::int64_t>(d) * v;
            const std::int64_t j0 = jo < 0 ? -jo : 0;
            const std::int64_t j1 = jo > 0 ? W - jo : W;
            const T wuv = wc[u * k + v];
            T* gs = gxrow + jo;
            for (std::int64_t j = j0; j < j1; ++j) gs[j] += wuv * grow[j];
          }
        }
      }
    }
  }
  return g;
}

// ---- standard convolution ------------------------------------------------

template <typename T>
struct ConvWeights {
  std::int64_t c_out = 0;
  std::int64_t c_in = 0;
  int k = 0;
  std::vector<T> w;  // (c_out, c_in, k, k)

  ConvWeights() = default;
  ConvWeights(std::int64_t c_out_, std::int64_t c_in_, int k_)
      : c_out(c_out_), c_in(c_in_), k(k_) {
    if (c_out < 1 || c_in < 1 || k < 1) throw std::invalid_argument("bad conv weight shape");
    w.assign(static_cast<std::size_t>(c_out) * c_in * k * k, T(0));
  }

  T& at(std::int64_t oc, std::int64_t ic, int u, int v) {
    return w[static_cast<std::size_t>(((oc * c_in + ic) * k + u) * k + v)];
  }
  const T& at(std::int64_t oc, std::int64_t ic, int u, int v) const {
    return w[static_cast<std::size_t>(((oc * c_in + ic) * k + u) * k + v)];
  }
};

namespace detail {

template <typename T>
void check_conv(const Tensor<T>& x, const ConvWeights<T>& wts, int stride, int padding,
                std::int64_t* out_h, std::int64_t* out_w) {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  if (x.c() != wts.c_in) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.c()) +
                                " channels, weights expect " + std::to_string(wts.c_in));
  }
  *out_h = conv_out_dim(x.h(), wts.k, stride, padding);
  *out_w = conv_out_dim(x.w(), wts.k, stride, padding);
  if (*out_h < 1 || *out_w < 1) {
    throw std::invalid_argument("conv2d: kernel does not fit input of shape " +
                                to_string(x.shape()));
  }
}

// Unpack one sample into a (c_in*k*k, out_h*out_w) patch matrix.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, int k, int stride,
            int padding, std::int64_t out_h, std::int64_t out_w, T* col) {
  const std::int64_t L = out_h * out_w;
  for (std::int64_t ci = 0; ci < C; ++ci) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        T* row = col + ((ci * k + u) * k + v) * L;
        for (std::int64_t oi = 0; oi < out_h; ++oi) {
          const std::int64_t ii = oi * stride - padding + u;
          if (ii < 0 || ii >= H) {
            for (std::int64_t oj = 0; oj < out_w; ++oj) row[oi * out_w + oj] = T(0);
            continue;
          }
          const T* xr = x + ci * H * W + ii * W;
          for (std::int64_t oj = 0; oj < out_w; ++oj) {
            const std::int64_t jj = oj * stride - padding + v;
            row[oi * out_w + oj] = (jj >= 0 && jj < W) ? xr[jj] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back into a sample gradient.
template <typename T>
void col2im_acc(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, int k, int stride,
                int padding, std::int64_t out_h, std::int64_t out_w, T* gx) {
  const std::int64_t L = out_h * out_w;
  for (std::int64_t ci = 0; ci < C; ++ci) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        const T* row = col + ((ci * k + u) * k + v) * L;
        for (std::int64_t oi = 0; oi < out_h; ++oi) {
          const std::int64_t ii = oi * stride - padding + u;
          if (ii < 0 || ii >= H) continue;
          T* xr = gx + ci * H * W + ii * W;
          for (std::int64_t oj = 0; oj < out_w; ++oj) {
            const std::int64_t jj = oj * stride - padding + v;
            if (jj >= 0 && jj < W) xr[jj] += row[oi * out_w + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation (no kernel flip), zero padding, no bias. im2col + GEMM;
// per-pixel accumulation runs over (c_in, u, v) in index order, the same
// order as the naive reference.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvWeights<T>& wts, int stride, int padding) {
  std::int64_t out_h = 0, out_w = 0;
  detail::check_conv(x, wts, stride, padding, &out_h, &out_w);
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::int64_t K = C * wts.k * wts.k;
  const std::int64_t L = out_h * out_w;
  Tensor<T> y({N, wts.c_out, out_h, out_w});
  std::vector<T> col(static_cast<std::size_t>(K * L));
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * H * W, C, H, W, wts.k, stride, padding, out_h, out_w,
                   col.data());
    T* yn = y.data() + n * wts.c_out * L;
    for (std::int64_t oc = 0; oc < wts.c_out; ++oc) {
      T* yr = yn + oc * L;
      for (std::int64_t l = 0; l < L; ++l) yr[l] = T(0);
      const T* wr = wts.w.data() + oc * K;
      for (std::int64_t r = 0; r < K; ++r) {
        const T a = wr[r];
        if (a == T(0)) continue;
        const T* cr = col.data() + r * L;
        for (std::int64_t l = 0; l < L; ++l) yr[l] += a * cr[l];
      }
    }
  }
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  std::vector<T> weights;  // (c_out, c_in, k, k)
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_y, const Tensor<T>& x,
                             const ConvWeights<T>& wts, int stride, int padding) {
  std::int64_t out_h = 0, out_w = 0;
  detail::check_conv(x, wts, stride, padding, &out_h, &out_w);
  if (grad_y.shape() != Shape4{x.n(), wts.c_out, out_h, out_w}) {
    throw std::invalid_argument("conv2d_backward: grad shape mismatch");
  }
  const std::int64_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const std::int64_t K = C * wts.k * wts.k;
  const std::int64_t L = out_h * out_w;

  ConvGrads<T> g;
  g.input = Tensor<T>(x.shape());
  g.weights.assign(wts.w.size(), T(0));

  std::vector<T> col(static_cast<std::size_t>(K * L));
  std::vector<T> gcol(static_cast<std::size_t>(K * L));
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * H * W, C, H, W, wts.k, stride, padding, out_h, out_w,
                   col.data());
    const T* gy = grad_y.data() + n * wts.c_out * L;
    // dW += gy . col^T, eight independent dot products per pass so the
    // reductions pipeline.
    constexpr std::int64_t RB = 8;
    for (std::int64_t oc = 0; oc < wts.c_out; ++oc) {
      const T* gr = gy + oc * L;
      T* gw = g.weights.data() + oc * K;
      std::int64_t r = 0;
      for (; r + RB <= K; r += RB) {
        const T* c0 = col.data() + r * L;
        T acc[RB] = {};
        for (std::int64_t l = 0; l < L; ++l) {
          const T gl = gr[l];
          for (std::int64_t b = 0; b < RB; ++b) acc[b] += gl * c0[b * L + l];
        }
        for (std::int64_t b = 0; b < RB; ++b) gw[r + b] += acc[b];
      }
      for (; r < K; ++r) {
        const T* cr = col.data() + r * L;
        T acc = T(0);
        for (std::int64_t l = 0; l < L; ++l) acc += gr[l] * cr[l];
        gw[r] += acc;
      }
    }
    // gcol = W^T . gy, then scatter back.
    for (std::int64_t r = 0; r < K; ++r) {
      T* gc = gcol.data() + r * L;
      for (std::int64_t l = 0; l < L; ++l) gc[l] = T(0);
      for (std::int64_t oc = 0; oc < wts.c_out; ++oc) {
        const T a = wts.w[static_cast<std::size_t>(oc * K + r)];
        if (a == T(0)) continue;
        const T* gr = gy + oc * L;
        for (std::int64_t l = 0; l < L; ++l) gc[l] += a * gr[l];
      }
    }
    detail::col2im_acc(gcol.data(), C, H, W, wts.k, stride, padding, out_h, out_w,
                       g.input.data() + n * C * H * W);
  }
  return g;
}

}  // namespace bnet
