#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bnet/graph.hpp"
#include "bnet/network.hpp"

namespace bnet {

struct CostRow {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

// Per-layer and total parameter / multiply-accumulate counts. The headline
// MAC count covers conv, linear and the norm recovery (affine counted as one
// scale MAC per element, conv recovery as k^2 per element); relu, pooling,
// residual adds and the standardize stage only enter the secondary all_ops
// total.
struct CostReport {
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::int64_t norm_params = 0;
  std::int64_t norm_macs = 0;
  std::int64_t all_ops = 0;

  std::string to_text() const;
  std::string to_csv() const;
};

CostReport count_params(const LayerGraph& g);
CostReport count_flops(const LayerGraph& g, int input_hw);

// ---- finite-difference gradient checking --------------------------------

struct GradCheckRow {
  std::string name;
  double rel_err = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckRow> rows;
  std::string to_text() const;
};

// Central differences on every parameter tensor and on the input. Per
// tensor, the reported error is ||a - n|| / (||a|| + ||n|| + 1e-12) over the
// Euclidean norms of the analytic and numeric gradients.
template <typename T>
GradCheckReport grad_check(Network<T>& net, const Tensor<T>& input,
                           const std::vector<int>& labels, double step = 1e-6) {
  if (net.param_count() > 50000) {
    throw std::invalid_argument("grad_check: graph too large to difference (> 50k parameters)");
  }
  net.set_mode(Mode::train);

  const auto loss_at = [&]() {
    Tensor<T> logits = net.forward(input);
    double loss = 0.0;
    {
      auto lg = softmax_cross_entropy(logits, labels);
      loss = lg.loss;
    }
    if (!std::isfinite(loss)) throw std::runtime_error("grad_check: non-finite loss");
    return loss;
  };

  // Analytic pass.
  Tensor<T> logits = net.forward(input);
  auto lg = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(lg.loss)) throw std::runtime_error("grad_check: non-finite loss");
  net.zero_grad();
  Tensor<T> input_grad = net.backward(lg.grad);

  auto params = net.parameters();
  std::vector<std::vector<T>> analytic(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) analytic[i] = *params[i].grad;

  GradCheckReport report;
  const auto check_span = [&](const std::string& name, T* values, const T* a, std::size_t count) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(static_cast<double>(saved) + step);
      const double up = loss_at();
      values[i] = static_cast<T>(static_cast<double>(saved) - step);
      const double down = loss_at();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double d = static_cast<double>(a[i]) - numeric;
      diff2 += d * d;
      a2 += static_cast<double>(a[i]) * static_cast<double>(a[i]);
      n2 += numeric * numeric;
    }
    GradCheckRow row;
    row.name = name;
    row.analytic_norm = std::sqrt(a2);
    row.numeric_norm = std::sqrt(n2);
    row.rel_err = std::sqrt(diff2) / (row.analytic_norm + row.numeric_norm + 1e-12);
    report.rows.push_back(row);
    if (row.rel_err > report.max_rel_err) report.max_rel_err = row.rel_err;
  };

  for (std::size_t i = 0; i < params.size(); ++i) {
    check_span(params[i].name, params[i].value->data(), analytic[i].data(),
               params[i].value->size());
  }
  Tensor<T> x = input;
  check_span("input", x.values().data(), input_grad.data(),
             static_cast<std::size_t>(x.numel()));
  return report;
}

// ---- enhancement heatmap -------------------------------------------------

struct Heatmap {
  int h = 0, w = 0;
  std::vector<int> counts;  // row-major, one count per position
  std::string layer;
  int channels = 0;
  std::vector<int> skipped_channels;

  int at(int i, int j) const { return counts[static_cast<std::size_t>(i) * w + j]; }
};

std::string heatmap_to_csv(const Heatmap& hm);
std::string heatmap_to_pgm(const Heatmap& hm);

// Per channel, fits y ~ a * xhat + b by least squares over all spatial
// positions of the layer's normalized input / recovered output pair, then
// counts positions whose output strictly exceeds the fit, summed across
// channels. Channels whose pairs are collinear up to rounding (including
// zero-variance xhat) contribute nothing and are reported as skipped.
template <typename T>
Heatmap enhancement_heatmap(Network<T>& net, const Tensor<T>& image, const std::string& layer) {
  if (image.n() != 1) throw std::invalid_argument("enhancement_heatmap expects a single image");
  auto cap = net.forward_capture(image, layer);
  const std::int64_t C = cap.xhat.c(), H = cap.xhat.h(), W = cap.xhat.w();
  const std::int64_t plane = H * W;

  Heatmap hm;
  hm.h = static_cast<int>(H);
  hm.w = static_cast<int>(W);
  hm.layer = layer;
  hm.channels = static_cast<int>(C);
  hm.counts.assign(static_cast<std::size_t>(plane), 0);

  for (std::int64_t c = 0; c < C; ++c) {
    const T* xs = cap.xhat.data() + c * plane;
    const T* ys = cap.y.data() + c * plane;
    double sx = 0.0, sy = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      sx += static_cast<double>(xs[i]);
      sy += static_cast<double>(ys[i]);
    }
    const double mx = sx / static_cast<double>(plane);
    const double my = sy / static_cast<double>(plane);
    double ssx = 0.0, sxy = 0.0, ssy = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double dx = static_cast<double>(xs[i]) - mx;
      const double dy = static_cast<double>(ys[i]) - my;
      ssx += dx * dx;
      sxy += dx * dy;
      ssy += dy * dy;
    }
    if (ssx <= 1e-28 * static_cast<double>(plane) * (mx * mx + 1.0)) {
      hm.skipped_channels.push_back(static_cast<int>(c));
      continue;
    }
    const double a = sxy / ssx;
    const double b = my - a * mx;
    double ssr = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double r = static_cast<double>(ys[i]) - (a * static_cast<double>(xs[i]) + b);
      ssr += r * r;
    }
    // Collinear up to rounding noise: the relation is linear, nothing is
    // enhanced. The absolute term covers constant-output channels.
    if (ssr <= 1e-8 * ssy + 1e-24 * static_cast<double>(plane) * (my * my + 1.0)) {
      hm.skipped_channels.push_back(static_cast<int>(c));
      continue;
    }
    for (std::int64_t i = 0; i < plane; ++i) {
      const double r = static_cast<double>(ys[i]) - (a * static_cast<double>(xs[i]) + b);
      if (r > 0.0) ++hm.counts[static_cast<std::size_t>(i)];
    }
  }
  return hm;
}

}  // namespace bnet
