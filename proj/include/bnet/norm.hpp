#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bnet/conv.hpp"
#include "bnet/rng.hpp"
#include "bnet/tensor.hpp"

namespace bnet {

enum class NormKind { BatchNorm, Bnet, GroupNorm, Gnet };
enum class Mode { train, eval };
enum class BnetInit { identity, fan_in };

inline const char* norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::BatchNorm: return "bn";
    case NormKind::Bnet: return "bnet";
    case NormKind::GroupNorm: return "gn";
    case NormKind::Gnet: return "gnet";
  }
  return "?";
}

// State of one normalization layer. Affine kinds (bn/gn) carry gamma/beta;
// conv kinds (bnet/gnet) carry a depthwise kernel whose bias plays the role
// of beta. Only batch-statistics kinds (bn/bnet) track running stats.
template <typename T>
struct NormState {
  NormKind kind = NormKind::BatchNorm;
  std::int64_t channels = 0;
  int groups = 1;                              // gn/gnet
  std::vector<T> gamma, beta;                  // bn/gn
  DepthwiseKernel<T> kernel;                   // bnet/gnet
  std::vector<T> running_mean, running_var;    // bn/bnet
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::train;

  bool has_affine() const { return kind == NormKind::BatchNorm || kind == NormKind::GroupNorm; }
  bool has_kernel() const { return !has_affine(); }
  bool uses_batch_stats() const { return kind == NormKind::BatchNorm || kind == NormKind::Bnet; }

  static NormState batch_norm(std::int64_t c, double eps = 1e-5, double momentum = 0.1) {
    NormState s;
    s.kind = NormKind::BatchNorm;
    s.channels = c;
    s.epsilon = eps;
    s.momentum = momentum;
    s.gamma.assign(static_cast<std::size_t>(c), T(1));
    s.beta.assign(static_cast<std::size_t>(c), T(0));
    s.running_mean.assign(static_cast<std::size_t>(c), T(0));
    s.running_var.assign(static_cast<std::size_t>(c), T(1));
    return s;
  }

  static NormState bnet(std::int64_t c, int k, int dilation = 1, double eps = 1e-5,
                        double momentum = 0.1) {
    NormState s;
    s.kind = NormKind::Bnet;
    s.channels = c;
    s.epsilon = eps;
    s.momentum = momentum;
    s.kernel = DepthwiseKernel<T>::identity(c, k, dilation);
    s.running_mean.assign(static_cast<std::size_t>(c), T(0));
    s.running_var.assign(static_cast<std::size_t>(c), T(1));
    return s;
  }

  static NormState group_norm(std::int64_t c, int groups, double eps = 1e-5) {
    if (groups < 1 || c % groups != 0) {
      throw std::invalid_argument("group_norm: channels not divisible by groups");
    }
    NormState s;
    s.kind = NormKind::GroupNorm;
    s.channels = c;
    s.groups = groups;
    s.epsilon = eps;
    s.gamma.assign(static_cast<std::size_t>(c), T(1));
    s.beta.assign(static_cast<std::size_t>(c), T(0));
    return s;
  }

  static NormState gnet(std::int64_t c, int groups, int k, int dilation = 1, double eps = 1e-5) {
    if (groups < 1 || c % groups != 0) {
      throw std::invalid_argument("gnet: channels not divisible by groups");
    }
    NormState s;
    s.kind = NormKind::Gnet;
    s.channels = c;
    s.groups = groups;
    s.epsilon = eps;
    s.kernel = DepthwiseKernel<T>::identity(c, k, dilation);
    return s;
  }

  // Alternative to the identity start: uniform fan-in init of the kernel.
  void reinit_kernel_fan_in(Rng& rng) {
    if (!has_kernel()) throw std::invalid_argument("fan-in init needs a kernel kind");
    const double bound = std::sqrt(6.0 / (kernel.k * kernel.k));
    for (auto& v : kernel.weights) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& v : kernel.bias) v = T(0);
  }
};

// Tensors saved by a train-mode forward for the backward pass. mean/var hold
// one entry per channel for batch kinds and per (sample, group) for group
// kinds.
template <typename T>
struct NormCache {
  bool valid = false;
  NormKind kind = NormKind::BatchNorm;
  Shape4 shape{};
  int groups = 1;
  Tensor<T> xhat;
  std::vector<double> mean, var;

  void release() {
    valid = false;
    xhat.release();
    mean.clear();
    var.clear();
  }
};

template <typename T>
struct NormParamGrads {
  std::vector<T> gamma, beta;     // affine kinds
  std::vector<T> weights, bias;   // kernel kinds
};

namespace detail {

template <typename T>
void check_norm_input(const Tensor<T>& x, const NormState<T>& s) {
  if (x.c() != s.channels) {
    throw std::invalid_argument("norm layer expects " + std::to_string(s.channels) +
                                " channels, got " + std::to_string(x.c()));
  }
  if (x.numel() == 0) throw std::invalid_argument("empty reduction");
}

}  // namespace detail

// Standardize each channel with batch statistics over (n, h, w) and update
// running stats with new = (1 - momentum) * old + momentum * batch.
template <typename T>
std::pair<Tensor<T>, NormCache<T>> normalize_train(const Tensor<T>& x, NormState<T>& s) {
  if (!s.uses_batch_stats()) {
    throw std::invalid_argument("normalize_train: state does not use batch statistics");
  }
  if (s.mode != Mode::train) throw std::invalid_argument("normalize_train: state not in train mode");
  detail::check_norm_input(x, s);
  const std::int64_t count = x.n() * x.h() * x.w();
  if (count < 2) throw std::invalid_argument("degenerate batch");

  auto [mean, var] = channel_moments_f64(x);
  const std::int64_t C = x.c();
  const std::int64_t plane = x.h() * x.w();

  Tensor<T> xhat(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    const double denom = std::sqrt(var[static_cast<std::size_t>(c)] + s.epsilon);
    if (!(denom > 0.0) || !std::isfinite(denom)) {
      throw std::runtime_error("non-finite statistics in normalize_train");
    }
    inv_std[static_cast<std::size_t>(c)] = 1.0 / denom;
  }
  for (std::int64_t n = 0; n < x.n(); ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* px = x.data() + (n * C + c) * plane;
      T* ph = xhat.data() + (n * C + c) * plane;
      const double m = mean[static_cast<std::size_t>(c)];
      const double is = inv_std[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < plane; ++i) {
        ph[i] = static_cast<T>((static_cast<double>(px[i]) - m) * is);
      }
    }
  }

  for (std::int64_t c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    s.running_mean[ci] = static_cast<T>((1.0 - s.momentum) * static_cast<double>(s.running_mean[ci]) +
                                        s.momentum * mean[ci]);
    s.running_var[ci] = static_cast<T>((1.0 - s.momentum) * static_cast<double>(s.running_var[ci]) +
                                       s.momentum * var[ci]);
  }

  NormCache<T> cache;
  cache.valid = true;
  cache.kind = s.kind;
  cache.shape = x.shape();
  cache.xhat = xhat;
  cache.mean = std::move(mean);
  cache.var = std::move(var);
  return {std::move(xhat), std::move(cache)};
}

// Standardize with running statistics; output for a sample is independent of
// the rest of the batch.
template <typename T>
Tensor<T> normalize_eval(const Tensor<T>& x, const NormState<T>& s) {
  if (!s.uses_batch_stats()) {
    throw std::invalid_argument("normalize_eval: state does not use batch statistics");
  }
  if (s.mode != Mode::eval) throw std::invalid_argument("normalize_eval: state not in eval mode");
  detail::check_norm_input(x, s);
  const std::int64_t C = x.c();
  const std::int64_t plane = x.h() * x.w();
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double v = static_cast<double>(s.running_var[ci]) + s.epsilon;
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::runtime_error("normalize_eval: running variance must be positive");
    }
    inv_std[ci] = 1.0 / std::sqrt(v);
  }
  Tensor<T> xhat(x.shape());
  for (std::int64_t n = 0; n < x.n(); ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* px = x.data() + (n * C + c) * plane;
      T* ph = xhat.data() + (n * C + c) * plane;
      const double m = static_cast<double>(s.running_mean[static_cast<std::size_t>(c)]);
      const double is = inv_std[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < plane; ++i) {
        ph[i] = static_cast<T>((static_cast<double>(px[i]) - m) * is);
      }
    }
  }
  return xhat;
}

// Per-(sample, group) standardization over (c/groups, h, w); identical in
// train and eval mode.
template <typename T>
std::pair<Tensor<T>, NormCache<T>> group_normalize(const Tensor<T>& x, const NormState<T>& s) {
  if (s.uses_batch_stats()) {
    throw std::invalid_argument("group_normalize: state is a batch-statistics kind");
  }
  detail::check_norm_input(x, s);
  if (s.channels % s.groups != 0) {
    throw std::invalid_argument("group_normalize: channels not divisible by groups");
  }
  const std::int64_t C = x.c(), g = s.groups;
  const std::int64_t cg = C / g;
  const std::int64_t plane = x.h() * x.w();
  const double count = static_cast<double>(cg * plane);

  NormCache<T> cache;
  cache.valid = true;
  cache.kind = s.kind;
  cache.shape = x.shape();
  cache.groups = s.groups;
  cache.mean.assign(static_cast<std::size_t>(x.n() * g), 0.0);
  cache.var.assign(static_cast<std::size_t>(x.n() * g), 0.0);

  Tensor<T> xhat(x.shape());
  for (std::int64_t n = 0; n < x.n(); ++n) {
    for (std::int64_t gi = 0; gi < g; ++gi) {
      const T* base = x.data() + (n * C + gi * cg) * plane;
      double sum = 0.0;
      for (std::int64_t i = 0; i < cg * plane; ++i) sum += static_cast<double>(base[i]);
      const double m = sum / count;
      double sq = 0.0;
      for (std::int64_t i = 0; i < cg * plane; ++i) {
        const double d = static_cast<double>(base[i]) - m;
        sq += d * d;
      }
      const double v = sq / count;
      if (!std::isfinite(m) || !std::isfinite(v)) {
        throw std::runtime_error("non-finite statistics in group_normalize");
      }
      cache.mean[static_cast<std::size_t>(n * g + gi)] = m;
      cache.var[static_cast<std::size_t>(n * g + gi)] = v;
      const double is = 1.0 / std::sqrt(v + s.epsilon);
      T* ph = xhat.data() + (n * C + gi * cg) * plane;
      for (std::int64_t i = 0; i < cg * plane; ++i) {
        ph[i] = static_cast<T>((static_cast<double>(base[i]) - m) * is);
      }
    }
  }
  cache.xhat = xhat;
  return {std::move(xhat), std::move(cache)};
}

// y = gamma * xhat + beta.
template <typename T>
Tensor<T> recover_bn(const Tensor<T>& xhat, const NormState<T>& s) {
  if (!s.has_affine()) throw std::invalid_argument("recover_bn: state has no affine parameters");
  detail::check_norm_input(xhat, s);
  const std::int64_t C = xhat.c();
  const std::int64_t plane = xhat.h() * xhat.w();
  Tensor<T> y(xhat.shape());
  for (std::int64_t n = 0; n < xhat.n(); ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* ph = xhat.data() + (n * C + c) * plane;
      T* py = y.data() + (n * C + c) * plane;
      const T gm = s.gamma[static_cast<std::size_t>(c)];
      const T bt = s.beta[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < plane; ++i) py[i] = gm * ph[i] + bt;
    }
  }
  return y;
}

// y = depthwise_conv2d(xhat, kernel); the kernel bias realizes beta.
template <typename T>
Tensor<T> recover_bnet(const Tensor<T>& xhat, const NormState<T>& s) {
  if (!s.has_kernel()) throw std::invalid_argument("recover_bnet: state has no kernel");
  return depthwise_conv2d(xhat, s.kernel);
}

// Full forward of normalize + recover. The cache is valid only after a
// train-mode call; eval-mode results carry an invalid cache.
template <typename T>
std::pair<Tensor<T>, NormCache<T>> norm_forward(const Tensor<T>& x, NormState<T>& s) {
  Tensor<T> xhat;
  NormCache<T> cache;
  if (s.uses_batch_stats()) {
    if (s.mode == Mode::train) {
      auto r = normalize_train(x, s);
      xhat = std::move(r.first);
      cache = std::move(r.second);
    } else {
      xhat = normalize_eval(x, s);
    }
  } else {
    auto r = group_normalize(x, s);
    xhat = std::move(r.first);
    if (s.mode == Mode::train) {
      cache = std::move(r.second);
    }
  }
  Tensor<T> y = s.has_affine() ? recover_bn(xhat, s) : recover_bnet(xhat, s);
  return {std::move(y), std::move(cache)};
}

// Exact gradients of the composed normalize + recover map, including the
// dependence of the batch statistics on the input.
template <typename T>
std::pair<Tensor<T>, NormParamGrads<T>> norm_backward(const Tensor<T>& grad_y,
                                                      const NormCache<T>& cache,
                                                      const NormState<T>& s) {
  if (!cache.valid) throw std::invalid_argument("norm_backward: stale cache");
  if (cache.kind != s.kind) throw std::invalid_argument("norm_backward: cache kind mismatch");
  if (grad_y.shape() != cache.shape) {
    throw std::invalid_argument("norm_backward: gradient shape mismatch");
  }

  const std::int64_t N = grad_y.n(), C = grad_y.c();
  const std::int64_t plane = grad_y.h() * grad_y.w();
  const Tensor<T>& xhat = cache.xhat;

  NormParamGrads<T> grads;
  Tensor<T> grad_xhat;

  if (s.has_affine()) {
    grads.gamma.assign(static_cast<std::size_t>(C), T(0));
    grads.beta.assign(static_cast<std::size_t>(C), T(0));
    grad_xhat = Tensor<T>(grad_y.shape());
    const std::int64_t W = grad_y.w();
    for (std::int64_t c = 0; c < C; ++c) {
      T gsum = T(0);
      T bsum = T(0);
      const T gm = s.gamma[static_cast<std::size_t>(c)];
      for (std::int64_t n = 0; n < N; ++n) {
        const T* gy = grad_y.data() + (n * C + c) * plane;
        const T* xh = xhat.data() + (n * C + c) * plane;
        T* gxh = grad_xhat.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          bsum += gy[i];
          gxh[i] = gy[i] * gm;
        }
        // Row-blocked partial sums, the same summation tree as the
        // depthwise kernel's per-tap weight gradient.
        for (std::int64_t r = 0; r < plane; r += W) {
          T acc = T(0);
          for (std::int64_t i = 0; i < W; ++i) acc += gy[r + i] * xh[r + i];
          gsum += acc;
        }
      }
      grads.gamma[static_cast<std::size_t>(c)] = gsum;
      grads.beta[static_cast<std::size_t>(c)] = bsum;
    }
  } else {
    auto g = depthwise_conv2d_backward(grad_y, xhat, s.kernel);
    grad_xhat = std::move(g.input);
    grads.weights = std::move(g.weights);
    grads.bias = std::move(g.bias);
  }

  Tensor<T> grad_x(grad_y.shape());
  if (s.uses_batch_stats()) {
    const double m = static_cast<double>(N * plane);
    for (std::int64_t c = 0; c < C; ++c) {
      double s1 = 0.0, s2 = 0.0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* gxh = grad_xhat.data() + (n * C + c) * plane;
        const T* xh = xhat.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          s1 += static_cast<double>(gxh[i]);
          s2 += static_cast<double>(gxh[i]) * static_cast<double>(xh[i]);
        }
      }
      const double inv_std = 1.0 / std::sqrt(cache.var[static_cast<std::size_t>(c)] + s.epsilon);
      const double mean_g = s1 / m;
      const double mean_gx = s2 / m;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* gxh = grad_xhat.data() + (n * C + c) * plane;
        const T* xh = xhat.data() + (n * C + c) * plane;
        T* gx = grad_x.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          gx[i] = static_cast<T>(inv_std * (static_cast<double>(gxh[i]) - mean_g -
                                            static_cast<double>(xh[i]) * mean_gx));
        }
      }
    }
  } else {
    const std::int64_t g = cache.groups;
    const std::int64_t cg = C / g;
    const double m = static_cast<double>(cg * plane);
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t gi = 0; gi < g; ++gi) {
        const T* gxh = grad_xhat.data() + (n * C + gi * cg) * plane;
        const T* xh = xhat.data() + (n * C + gi * cg) * plane;
        T* gx = grad_x.data() + (n * C + gi * cg) * plane;
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t i = 0; i < cg * plane; ++i) {
          s1 += static_cast<double>(gxh[i]);
          s2 += static_cast<double>(gxh[i]) * static_cast<double>(xh[i]);
        }
        const double inv_std =
            1.0 / std::sqrt(cache.var[static_cast<std::size_t>(n * g + gi)] + s.epsilon);
        const double mean_g = s1 / m;
        const double mean_gx = s2 / m;
        for (std::int64_t i = 0; i < cg * plane; ++i) {
          gx[i] = static_cast<T>(inv_std * (static_cast<double>(gxh[i]) - mean_g -
                                            static_cast<double>(xh[i]) * mean_gx));
        }
      }
    }
  }
  return {std::move(grad_x), std::move(grads)};
}

}  // namespace bnet
