#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bnet/checkpoint.hpp"
#include "bnet/conv.hpp"
#include "bnet/graph.hpp"
#include "bnet/norm.hpp"
#include "bnet/rng.hpp"
#include "bnet/tensor.hpp"

namespace bnet {

struct NetworkOptions {
  BnetInit bnet_init = BnetInit::identity;
  double norm_momentum = 0.1;
  double epsilon = 1e-5;
};

template <typename T>
struct LossGrad {
  double loss = 0.0;
  Tensor<T> grad;
  std::int64_t correct = 0;
};

// Mean softmax cross-entropy with log-sum-exp stabilization over (n, classes, 1, 1) logits.
template <typename T>
LossGrad<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::int64_t N = logits.n(), C = logits.c();
  if (logits.h() != 1 || logits.w() != 1) {
    throw std::invalid_argument("softmax_cross_entropy expects (n, classes, 1, 1) logits");
  }
  if (static_cast<std::int64_t>(labels.size()) != N) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  LossGrad<T> out;
  out.grad = Tensor<T>(logits.shape());
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n) {
    const int label = labels[static_cast<std::size_t>(n)];
    if (label < 0 || label >= C) throw std::invalid_argument("label out of range");
    const T* z = logits.data() + n * C;
    double zmax = -std::numeric_limits<double>::infinity();
    std::int64_t argmax = 0;
    for (std::int64_t c = 0; c < C; ++c) {
      if (static_cast<double>(z[c]) > zmax) {
        zmax = static_cast<double>(z[c]);
        argmax = c;
      }
    }
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(z[c]) - zmax);
    const double lse = zmax + std::log(sum);
    total += lse - static_cast<double>(z[label]);
    if (argmax == label) ++out.correct;
    T* g = out.grad.data() + n * C;
    for (std::int64_t c = 0; c < C; ++c) {
      const double p = std::exp(static_cast<double>(z[c]) - lse);
      g[c] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) / static_cast<double>(N));
    }
  }
  out.loss = total / static_cast<double>(N);
  return out;
}

// Executable network instantiated from a LayerGraph: owns parameters,
// gradients and per-node activations. Forward in train mode retains what the
// backward pass needs; backward releases buffers as it consumes them.
template <typename T>
class Network {
 public:
  struct Param {
    std::string name;
    std::vector<T>* value;
    std::vector<T>* grad;
  };

  Network(LayerGraph graph, std::uint64_t seed, NetworkOptions opts = {})
      : g_(std::move(graph)), opts_(opts) {
    validate_graph(g_);
    nodes_.resize(g_.nodes.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < g_.nodes.size(); ++i) init_node(static_cast<int>(i), rng);
  }

  const LayerGraph& graph() const { return g_; }
  Mode mode() const { return mode_; }

  void set_mode(Mode m) {
    mode_ = m;
    for (std::size_t i = 0; i < g_.nodes.size(); ++i) {
      if (g_.nodes[i].kind == LayerKind::Norm) nodes_[i].norm.mode = m;
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (!(x.c() == g_.input.c && x.h() == g_.input.h && x.w() == g_.input.w)) {
      throw std::invalid_argument("network input shape mismatch: got " + to_string(x.shape()) +
                                  ", graph expects (*," + std::to_string(g_.input.c) + "," +
                                  std::to_string(g_.input.h) + "," + std::to_string(g_.input.w) +
                                  ")");
    }
    for (auto& n : nodes_) {
      n.act.release();
      n.grad.release();
      n.cache.release();
      n.argmax.clear();
    }
    for (std::size_t i = 0; i < g_.nodes.size(); ++i) forward_node(static_cast<int>(i), x);
    return nodes_[static_cast<std::size_t>(g_.output)].act;
  }

  // Backward through the last train-mode forward. Returns dL/dinput.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    if (mode_ != Mode::train) throw std::invalid_argument("backward requires train mode");
    auto& out_node = nodes_[static_cast<std::size_t>(g_.output)];
    if (out_node.act.numel() == 0) throw std::invalid_argument("backward without forward");
    detail::require_same_shape(grad_out.shape(), out_node.act.shape(), "network backward");
    out_node.grad = grad_out;
    for (int i = static_cast<int>(g_.nodes.size()) - 1; i > 0; --i) backward_node(i);
    Tensor<T> gx = std::move(nodes_[0].grad);
    nodes_[0].act.release();
    nodes_[0].grad.release();
    return gx;
  }

  void zero_grad() {
    for (auto& n : nodes_) {
      std::fill(n.conv_gw.begin(), n.conv_gw.end(), T(0));
      std::fill(n.dw_gw.begin(), n.dw_gw.end(), T(0));
      std::fill(n.dw_gb.begin(), n.dw_gb.end(), T(0));
      std::fill(n.lin_gw.begin(), n.lin_gw.end(), T(0));
      std::fill(n.lin_gb.begin(), n.lin_gb.end(), T(0));
      std::fill(n.norm_ggamma.begin(), n.norm_ggamma.end(), T(0));
      std::fill(n.norm_gbeta.begin(), n.norm_gbeta.end(), T(0));
      std::fill(n.norm_gw.begin(), n.norm_gw.end(), T(0));
      std::fill(n.norm_gb.begin(), n.norm_gb.end(), T(0));
    }
  }

  std::vector<Param> parameters() {
    std::vector<Param> out;
    for (std::size_t i = 0; i < g_.nodes.size(); ++i) {
      const LayerDesc& d = g_.nodes[i];
      Node& n = nodes_[i];
      switch (d.kind) {
        case LayerKind::Conv:
          out.push_back({d.name + ".w", &n.conv.w, &n.conv_gw});
          break;
        case LayerKind::DepthwiseConv:
          out.push_back({d.name + ".w", &n.dw.weights, &n.dw_gw});
          out.push_back({d.name + ".b", &n.dw.bias, &n.dw_gb});
          break;
        case LayerKind::Norm:
          if (n.norm.has_affine()) {
            out.push_back({d.name + ".gamma", &n.norm.gamma, &n.norm_ggamma});
            out.push_back({d.name + ".beta", &n.norm.beta, &n.norm_gbeta});
          } else {
            out.push_back({d.name + ".w", &n.norm.kernel.weights, &n.norm_gw});
            out.push_back({d.name + ".b", &n.norm.kernel.bias, &n.norm_gb});
          }
          break;
        case LayerKind::Linear:
          out.push_back({d.name + ".w", &n.lin_w, &n.lin_gw});
          out.push_back({d.name + ".b", &n.lin_b, &n.lin_gb});
          break;
        default:
          break;
      }
    }
    return out;
  }

  std::int64_t param_count() {
    std::int64_t total = 0;
    for (const auto& p : parameters()) total += static_cast<std::int64_t>(p.value->size());
    return total;
  }

  NormState<T>& norm_state(const std::string& name) {
    const int id = g_.find_node(name);
    if (id < 0 || g_.nodes[static_cast<std::size_t>(id)].kind != LayerKind::Norm) {
      throw std::invalid_argument("no norm layer named '" + name + "'");
    }
    return nodes_[static_cast<std::size_t>(id)].norm;
  }

  Checkpoint save_state(std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.step = step;
    for (std::size_t i = 0; i < g_.nodes.size(); ++i) {
      const LayerDesc& d = g_.nodes[i];
      Node& n = nodes_[i];
      switch (d.kind) {
        case LayerKind::Conv:
          push_tensor(ckpt, d.name + ".w",
                      {static_cast<std::uint32_t>(d.c_out), static_cast<std::uint32_t>(d.c_in),
                       static_cast<std::uint32_t>(d.k), static_cast<std::uint32_t>(d.k)},
                      n.conv.w);
          break;
        case LayerKind::DepthwiseConv:
          push_tensor(ckpt, d.name + ".w",
                      {static_cast<std::uint32_t>(d.c_out), static_cast<std::uint32_t>(d.k),
                       static_cast<std::uint32_t>(d.k)},
                      n.dw.weights);
          push_tensor(ckpt, d.name + ".b", {static_cast<std::uint32_t>(d.c_out)}, n.dw.bias);
          break;
        case LayerKind::Norm: {
          const auto c = static_cast<std::uint32_t>(d.c_out);
          if (n.norm.has_affine()) {
            push_tensor(ckpt, d.name + ".gamma", {c}, n.norm.gamma);
            push_tensor(ckpt, d.name + ".beta", {c}, n.norm.beta);
          } else {
            push_tensor(ckpt, d.name + ".w",
                        {c, static_cast<std::uint32_t>(n.norm.kernel.k),
                         static_cast<std::uint32_t>(n.norm.kernel.k)},
                        n.norm.kernel.weights);
            push_tensor(ckpt, d.name + ".b", {c}, n.norm.kernel.bias);
          }
          if (n.norm.uses_batch_stats()) {
            push_tensor(ckpt, d.name + ".running_mean", {c}, n.norm.running_mean);
            push_tensor(ckpt, d.name + ".running_var", {c}, n.norm.running_var);
          }
          break;
        }
        case LayerKind::Linear:
          push_tensor(ckpt, d.name + ".w",
                      {static_cast<std::uint32_t>(d.out_features),
                       static_cast<std::uint32_t>(d.in_features)},
                      n.lin_w);
          push_tensor(ckpt, d.name + ".b", {static_cast<std::uint32_t>(d.out_features)}, n.lin_b);
          break;
        default:
          break;
      }
    }
    return ckpt;
  }

  void load_state(const Checkpoint& ckpt) {
    const Checkpoint expected = save_state(0);
    if (ckpt.tensors.size() != expected.tensors.size()) {
      throw std::runtime_error("checkpoint tensor count mismatch: expected " +
                               std::to_string(expected.tensors.size()) + ", got " +
                               std::to_string(ckpt.tensors.size()));
    }
    for (const auto& want : expected.tensors) {
      const NamedTensor* have = ckpt.find(want.name);
      if (have == nullptr) throw std::runtime_error("checkpoint is missing tensor " + want.name);
      if (have->dtype != Tensor<T>::dtype()) {
        throw std::runtime_error("checkpoint tensor " + want.name + " has dtype " +
                                 dtype_name(have->dtype) + ", network expects " +
                                 dtype_name(Tensor<T>::dtype()));
      }
      if (have->dims != want.dims) {
        throw std::runtime_error("checkpoint tensor " + want.name + " has unexpected dims");
      }
      std::vector<T>* dest = find_storage(want.name);
      const auto& src = payload(*have);
      dest->assign(src.begin(), src.end());
    }
  }

  struct NormCapture {
    Tensor<T> xhat;
    Tensor<T> y;
  };

  // Runs an eval-mode forward and captures the normalized input and the
  // recovered output of one norm layer.
  NormCapture forward_capture(const Tensor<T>& x, const std::string& layer) {
    const int id = g_.find_node(layer);
    if (id < 0 || g_.nodes[static_cast<std::size_t>(id)].kind != LayerKind::Norm) {
      throw std::invalid_argument("layer '" + layer + "' not found or not a norm layer");
    }
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.norm.has_kernel()) {
      throw std::invalid_argument("layer '" + layer + "' is not a bnet/gnet layer");
    }
    const Mode prev = mode_;
    set_mode(Mode::eval);
    forward(x);
    NormCapture cap;
    const Tensor<T>& in = nodes_[static_cast<std::size_t>(g_.nodes[static_cast<std::size_t>(id)].in0)].act;
    if (node.norm.uses_batch_stats()) {
      cap.xhat = normalize_eval(in, node.norm);
    } else {
      cap.xhat = group_normalize(in, node.norm).first;
    }
    cap.y = node.act;
    set_mode(prev);
    return cap;
  }

 private:
  struct Node {
    ConvWeights<T> conv;
    std::vector<T> conv_gw;
    DepthwiseKernel<T> dw;
    std::vector<T> dw_gw, dw_gb;
    NormState<T> norm;
    NormCache<T> cache;
    std::vector<T> norm_ggamma, norm_gbeta, norm_gw, norm_gb;
    std::vector<T> lin_w, lin_b, lin_gw, lin_gb;
    Tensor<T> act;
    Tensor<T> grad;
    std::vector<std::int64_t> argmax;  // maxpool backward bookkeeping
  };

  void init_node(int id, Rng& rng) {
    const LayerDesc& d = g_.nodes[static_cast<std::size_t>(id)];
    Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (d.kind) {
      case LayerKind::Conv: {
        n.conv = ConvWeights<T>(d.c_out, d.c_in, d.k);
        const double bound = std::sqrt(6.0 / (static_cast<double>(d.c_in) * d.k * d.k));
        for (auto& v : n.conv.w) v = static_cast<T>(rng.uniform(-bound, bound));
        n.conv_gw.assign(n.conv.w.size(), T(0));
        break;
      }
      case LayerKind::DepthwiseConv: {
        n.dw = DepthwiseKernel<T>(d.c_out, d.k, d.dilation);
        const double bound = std::sqrt(6.0 / (static_cast<double>(d.k) * d.k));
        for (auto& v : n.dw.weights) v = static_cast<T>(rng.uniform(-bound, bound));
        n.dw_gw.assign(n.dw.weights.size(), T(0));
        n.dw_gb.assign(n.dw.bias.size(), T(0));
        break;
      }
      case LayerKind::Norm: {
        switch (d.norm.kind) {
          case NormKind::BatchNorm:
            n.norm = NormState<T>::batch_norm(d.c_out, opts_.epsilon, opts_.norm_momentum);
            break;
          case NormKind::Bnet:
            n.norm = NormState<T>::bnet(d.c_out, d.norm.k, d.norm.dilation, opts_.epsilon,
                                        opts_.norm_momentum);
            if (opts_.bnet_init == BnetInit::fan_in) n.norm.reinit_kernel_fan_in(rng);
            break;
          case NormKind::GroupNorm:
            n.norm = NormState<T>::group_norm(d.c_out, d.norm.groups, opts_.epsilon);
            break;
          case NormKind::Gnet:
            n.norm = NormState<T>::gnet(d.c_out, d.norm.groups, d.norm.k, d.norm.dilation,
                                        opts_.epsilon);
            if (opts_.bnet_init == BnetInit::fan_in) n.norm.reinit_kernel_fan_in(rng);
            break;
        }
        n.norm.mode = mode_;
        if (n.norm.has_affine()) {
          n.norm_ggamma.assign(n.norm.gamma.size(), T(0));
          n.norm_gbeta.assign(n.norm.beta.size(), T(0));
        } else {
          n.norm_gw.assign(n.norm.kernel.weights.size(), T(0));
          n.norm_gb.assign(n.norm.kernel.bias.size(), T(0));
        }
        break;
      }
      case LayerKind::Linear: {
        n.lin_w.assign(static_cast<std::size_t>(d.out_features * d.in_features), T(0));
        n.lin_b.assign(static_cast<std::size_t>(d.out_features), T(0));
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.in_features));
        for (auto& v : n.lin_w) v = static_cast<T>(rng.uniform(-bound, bound));
        n.lin_gw.assign(n.lin_w.size(), T(0));
        n.lin_gb.assign(n.lin_b.size(), T(0));
        break;
      }
      default:
        break;
    }
  }

  void forward_node(int id, const Tensor<T>& input) {
    const LayerDesc& d = g_.nodes[static_cast<std::size_t>(id)];
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor<T>& in = d.kind == LayerKind::Input
                              ? input
                              : nodes_[static_cast<std::size_t>(d.in0)].act;
    switch (d.kind) {
      case LayerKind::Input:
        n.act = input;
        break;
      case LayerKind::Conv:
        n.act = conv2d(in, n.conv, d.stride, d.padding);
        break;
      case LayerKind::DepthwiseConv:
        n.act = depthwise_conv2d(in, n.dw);
        break;
      case LayerKind::Norm: {
        auto r = norm_forward(in, n.norm);
        n.act = std::move(r.first);
        n.cache = std::move(r.second);
        break;
      }
      case LayerKind::Relu:
        n.act = relu(in);
        break;
      case LayerKind::MaxPool:
        n.act = maxpool_forward(in, d, n.argmax);
        break;
      case LayerKind::GlobalAvgPool: {
        const std::int64_t plane = in.h() * in.w();
        Tensor<T> y({in.n(), in.c(), 1, 1});
        for (std::int64_t b = 0; b < in.n(); ++b) {
          for (std::int64_t c = 0; c < in.c(); ++c) {
            const T* p = in.data() + (b * in.c() + c) * plane;
            double sum = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
            y.at(b, c, 0, 0) = static_cast<T>(sum / static_cast<double>(plane));
          }
        }
        n.act = std::move(y);
        break;
      }
      case LayerKind::Add:
        n.act = add(in, nodes_[static_cast<std::size_t>(d.in1)].act);
        break;
      case LayerKind::Linear: {
        const std::int64_t N = in.n(), I = d.in_features, O = d.out_features;
        Tensor<T> y({N, O, 1, 1});
        for (std::int64_t b = 0; b < N; ++b) {
          const T* xr = in.data() + b * I;
          T* yr = y.data() + b * O;
          for (std::int64_t o = 0; o < O; ++o) {
            T acc = n.lin_b[static_cast<std::size_t>(o)];
            const T* wr = n.lin_w.data() + o * I;
            for (std::int64_t i = 0; i < I; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
          }
        }
        n.act = std::move(y);
        break;
      }
    }
  }

  static Tensor<T> maxpool_forward(const Tensor<T>& in, const LayerDesc& d,
                                   std::vector<std::int64_t>& argmax) {
    const std::int64_t N = in.n(), C = in.c(), H = in.h(), W = in.w();
    const std::int64_t OH = conv_out_dim(H, d.k, d.stride, d.padding);
    const std::int64_t OW = conv_out_dim(W, d.k, d.stride, d.padding);
    Tensor<T> y({N, C, OH, OW});
    argmax.assign(static_cast<std::size_t>(N * C * OH * OW), -1);
    for (std::int64_t b = 0; b < N; ++b) {
      for (std::int64_t c = 0; c < C; ++c) {
        const T* p = in.data() + (b * C + c) * H * W;
        T* q = y.data() + (b * C + c) * OH * OW;
        std::int64_t* am = argmax.data() + (b * C + c) * OH * OW;
        for (std::int64_t oi = 0; oi < OH; ++oi) {
          for (std::int64_t oj = 0; oj < OW; ++oj) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_idx = -1;
            for (int u = 0; u < d.k; ++u) {
              const std::int64_t ii = oi * d.stride - d.padding + u;
              if (ii < 0 || ii >= H) continue;
              for (int v = 0; v < d.k; ++v) {
                const std::int64_t jj = oj * d.stride - d.padding + v;
                if (jj < 0 || jj >= W) continue;
                if (p[ii * W + jj] > best) {
                  best = p[ii * W + jj];
                  best_idx = ii * W + jj;
                }
              }
            }
            q[oi * OW + oj] = best;
            am[oi * OW + oj] = best_idx;
          }
        }
      }
    }
    return y;
  }

  void backward_node(int id) {
    const LayerDesc& d = g_.nodes[static_cast<std::size_t>(id)];
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (d.kind == LayerKind::Input) return;
    if (n.grad.numel() == 0) {
      n.act.release();
      return;
    }
    const Tensor<T>& g = n.grad;
    const Tensor<T>& in = nodes_[static_cast<std::size_t>(d.in0)].act;
    switch (d.kind) {
      case LayerKind::Input:
        return;
      case LayerKind::Conv: {
        auto cg = conv2d_backward(g, in, n.conv, d.stride, d.padding);
        acc_vec(n.conv_gw, cg.weights);
        acc_grad(d.in0, std::move(cg.input));
        break;
      }
      case LayerKind::DepthwiseConv: {
        auto dg = depthwise_conv2d_backward(g, in, n.dw);
        acc_vec(n.dw_gw, dg.weights);
        acc_vec(n.dw_gb, dg.bias);
        acc_grad(d.in0, std::move(dg.input));
        break;
      }
      case LayerKind::Norm: {
        auto [gx, pg] = norm_backward(g, n.cache, n.norm);
        if (n.norm.has_affine()) {
          acc_vec(n.norm_ggamma, pg.gamma);
          acc_vec(n.norm_gbeta, pg.beta);
        } else {
          acc_vec(n.norm_gw, pg.weights);
          acc_vec(n.norm_gb, pg.bias);
        }
        n.cache.release();
        acc_grad(d.in0, std::move(gx));
        break;
      }
      case LayerKind::Relu: {
        Tensor<T> gx(g.shape());
        const T* pg = g.data();
        const T* px = in.data();
        T* po = gx.data();
        for (std::int64_t i = 0; i < g.numel(); ++i) po[i] = px[i] > T(0) ? pg[i] : T(0);
        acc_grad(d.in0, std::move(gx));
        break;
      }
      case LayerKind::MaxPool: {
        Tensor<T> gx(in.shape());
        const std::int64_t per = g.h() * g.w();
        for (std::int64_t bc = 0; bc < g.n() * g.c(); ++bc) {
          const T* pg = g.data() + bc * per;
          T* po = gx.data() + bc * in.h() * in.w();
          const std::int64_t* am = n.argmax.data() + bc * per;
          for (std::int64_t i = 0; i < per; ++i) {
            if (am[i] >= 0) po[am[i]] += pg[i];
          }
        }
        acc_grad(d.in0, std::move(gx));
        break;
      }
      case LayerKind::GlobalAvgPool: {
        Tensor<T> gx(in.shape());
        const std::int64_t plane = in.h() * in.w();
        for (std::int64_t bc = 0; bc < in.n() * in.c(); ++bc) {
          const T v = static_cast<T>(static_cast<double>(g.data()[bc]) /
                                     static_cast<double>(plane));
          T* po = gx.data() + bc * plane;
          for (std::int64_t i = 0; i < plane; ++i) po[i] = v;
        }
        acc_grad(d.in0, std::move(gx));
        break;
      }
      case LayerKind::Add: {
        acc_grad(d.in0, Tensor<T>(g));
        acc_grad(d.in1, Tensor<T>(g));
        break;
      }
      case LayerKind::Linear: {
        const std::int64_t N = g.n(), I = d.in_features, O = d.out_features;
        Tensor<T> gx(in.shape());
        for (std::int64_t b = 0; b < N; ++b) {
          const T* gr = g.data() + b * O;
          const T* xr = in.data() + b * I;
          T* gxr = gx.data() + b * I;
          for (std::int64_t o = 0; o < O; ++o) {
            const T go = gr[o];
            n.lin_gb[static_cast<std::size_t>(o)] += go;
            T* gw = n.lin_gw.data() + o * I;
            const T* wr = n.lin_w.data() + o * I;
            for (std::int64_t i = 0; i < I; ++i) {
              gw[i] += go * xr[i];
              gxr[i] += go * wr[i];
            }
          }
        }
        acc_grad(d.in0, std::move(gx));
        break;
      }
    }
    n.act.release();
    n.grad.release();
  }

  void acc_grad(int id, Tensor<T> g) {
    Tensor<T>& dst = nodes_[static_cast<std::size_t>(id)].grad;
    if (dst.numel() == 0) {
      dst = std::move(g);
      return;
    }
    T* pd = dst.data();
    const T* ps = g.data();
    for (std::int64_t i = 0; i < dst.numel(); ++i) pd[i] += ps[i];
  }

  static void acc_vec(std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  std::vector<T>* find_storage(const std::string& name) {
    for (std::size_t i = 0; i < g_.nodes.size(); ++i) {
      const LayerDesc& d = g_.nodes[i];
      Node& n = nodes_[i];
      if (name.rfind(d.name + ".", 0) != 0) continue;
      const std::string suffix = name.substr(d.name.size() + 1);
      switch (d.kind) {
        case LayerKind::Conv:
          if (suffix == "w") return &n.conv.w;
          break;
        case LayerKind::DepthwiseConv:
          if (suffix == "w") return &n.dw.weights;
          if (suffix == "b") return &n.dw.bias;
          break;
        case LayerKind::Norm:
          if (suffix == "gamma") return &n.norm.gamma;
          if (suffix == "beta") return &n.norm.beta;
          if (suffix == "w") return &n.norm.kernel.weights;
          if (suffix == "b") return &n.norm.kernel.bias;
          if (suffix == "running_mean") return &n.norm.running_mean;
          if (suffix == "running_var") return &n.norm.running_var;
          break;
        case LayerKind::Linear:
          if (suffix == "w") return &n.lin_w;
          if (suffix == "b") return &n.lin_b;
          break;
        default:
          break;
      }
    }
    throw std::runtime_error("no storage for checkpoint tensor " + name);
  }

  void push_tensor(Checkpoint& ckpt, const std::string& name, std::vector<std::uint32_t> dims,
                   const std::vector<T>& values) {
    if constexpr (std::is_same_v<T, float>) {
      ckpt.tensors.push_back(NamedTensor::of_f32(name, std::move(dims), values));
    } else {
      ckpt.tensors.push_back(NamedTensor::of_f64(name, std::move(dims), values));
    }
  }

  static const std::vector<T>& payload(const NamedTensor& t) {
    if constexpr (std::is_same_v<T, float>) {
      return t.f32;
    } else {
      return t.f64;
    }
  }

  LayerGraph g_;
  NetworkOptions opts_;
  Mode mode_ = Mode::train;
  std::vector<Node> nodes_;
};

}  // namespace bnet
