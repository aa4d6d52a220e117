#include "bnet/analysis.hpp"

#include <algorithm>
#include <cstdio>

#include "bnet/conv.hpp"

namespace bnet {

namespace {

struct NodeDims {
  std::int64_t c = 0, h = 0, w = 0;
};

// Headline MACs for one node at a resolved output size.
std::int64_t node_macs(const LayerDesc& d, const NodeDims& out) {
  const std::int64_t plane = out.h * out.w;
  switch (d.kind) {
    case LayerKind::Conv:
      return static_cast<std::int64_t>(d.k) * d.k * d.c_in * d.c_out * plane;
    case LayerKind::DepthwiseConv:
      return static_cast<std::int64_t>(d.k) * d.k * d.c_out * plane;
    case LayerKind::Norm:
      if (d.norm.kind == NormKind::BatchNorm || d.norm.kind == NormKind::GroupNorm) {
        return d.c_out * plane;  // one scale MAC per element
      }
      return static_cast<std::int64_t>(d.norm.k) * d.norm.k * d.c_out * plane;
    case LayerKind::Linear:
      return d.in_features * d.out_features;
    default:
      return 0;
  }
}

// Elementwise work excluded from the headline count.
std::int64_t node_extra_ops(const LayerDesc& d, const NodeDims& in, const NodeDims& out) {
  switch (d.kind) {
    case LayerKind::Norm:
      return 2 * out.c * out.h * out.w;  // subtract + scale of the standardize stage
    case LayerKind::Relu:
    case LayerKind::Add:
      return out.c * out.h * out.w;
    case LayerKind::GlobalAvgPool:
      return in.c * in.h * in.w;
    case LayerKind::MaxPool:
      return static_cast<std::int64_t>(d.k) * d.k * out.c * out.h * out.w;
    case LayerKind::Linear:
      return d.out_features;  // bias add
    case LayerKind::DepthwiseConv:
      return out.c * out.h * out.w;  // bias add
    default:
      return 0;
  }
}

CostReport count_impl(const LayerGraph& g, int input_hw, bool with_macs) {
  validate_graph(g);
  CostReport report;
  std::vector<NodeDims> dims(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const LayerDesc& d = g.nodes[i];
    NodeDims in{};
    if (d.kind == LayerKind::Input) {
      dims[i] = {d.out.c, input_hw, input_hw};
    } else {
      in = dims[static_cast<std::size_t>(d.in0)];
      switch (d.kind) {
        case LayerKind::Conv:
        case LayerKind::MaxPool:
          dims[i] = {d.c_out, conv_out_dim(in.h, d.k, d.stride, d.padding),
                     conv_out_dim(in.w, d.k, d.stride, d.padding)};
          if (dims[i].h < 1 || dims[i].w < 1) {
            throw std::invalid_argument("count: unresolved shapes at node '" + d.name + "'");
          }
          break;
        case LayerKind::GlobalAvgPool:
        case LayerKind::Linear:
          dims[i] = {d.c_out, 1, 1};
          break;
        default:
          dims[i] = {d.c_out, in.h, in.w};
          break;
      }
    }
    const std::int64_t params = layer_param_count(d);
    const std::int64_t macs = with_macs ? node_macs(d, dims[i]) : 0;
    if (params > 0 || macs > 0) {
      report.rows.push_back({d.name, layer_kind_name(d.kind), params, macs});
    }
    report.total_params += params;
    report.total_macs += macs;
    if (d.kind == LayerKind::Norm) {
      report.norm_params += params;
      report.norm_macs += macs;
    }
    if (with_macs) report.all_ops += macs + node_extra_ops(d, in, dims[i]);
  }
  return report;
}

}  // namespace

CostReport count_params(const LayerGraph& g) {
  CostReport r = count_impl(g, static_cast<int>(g.input.h), false);
  r.total_macs = 0;
  r.all_ops = 0;
  return r;
}

CostReport count_flops(const LayerGraph& g, int input_hw) {
  return count_impl(g, input_hw, true);
}

std::string CostReport::to_text() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %-8s %14s %16s\n", "layer", "kind", "params", "macs");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %-8s %14lld %16lld\n", r.name.c_str(), r.kind.c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.macs));
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-24s %-8s %14lld %16lld\n", "total", "",
                static_cast<long long>(total_params), static_cast<long long>(total_macs));
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-24s %-8s %14lld %16lld\n", "norm share", "",
                static_cast<long long>(norm_params), static_cast<long long>(norm_macs));
  out += buf;
  if (all_ops > 0) {
    std::snprintf(buf, sizeof(buf), "%-24s %-8s %14s %16lld\n", "all ops", "", "",
                  static_cast<long long>(all_ops));
    out += buf;
  }
  return out;
}

std::string CostReport::to_csv() const {
  std::string out = "layer,kind,params,macs\n";
  for (const auto& r : rows) {
    out += r.name + "," + r.kind + "," + std::to_string(r.params) + "," +
           std::to_string(r.macs) + "\n";
  }
  out += "total,," + std::to_string(total_params) + "," + std::to_string(total_macs) + "\n";
  out += "norm_share,," + std::to_string(norm_params) + "," + std::to_string(norm_macs) + "\n";
  if (all_ops > 0) out += "all_ops,,," + std::to_string(all_ops) + "\n";
  return out;
}

std::string GradCheckReport::to_text() const {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-28s %12s %14s %14s\n", "parameter", "rel_err", "analytic",
                "numeric");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-28s %12.3e %14.6e %14.6e\n", r.name.c_str(), r.rel_err,
                  r.analytic_norm, r.numeric_norm);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "max_rel_err %.3e\n", max_rel_err);
  out += buf;
  return out;
}

std::string heatmap_to_csv(const Heatmap& hm) {
  std::string out;
  for (int i = 0; i < hm.h; ++i) {
    for (int j = 0; j < hm.w; ++j) {
      out += std::to_string(hm.at(i, j));
      out += (j + 1 == hm.w) ? '\n' : ',';
    }
  }
  return out;
}

std::string heatmap_to_pgm(const Heatmap& hm) {
  std::string out = "P2\n" + std::to_string(hm.w) + " " + std::to_string(hm.h) + "\n" +
                    std::to_string(std::max(1, hm.channels)) + "\n";
  for (int i = 0; i < hm.h; ++i) {
    for (int j = 0; j < hm.w; ++j) {
      out += std::to_string(hm.at(i, j));
      out += (j + 1 == hm.w) ? '\n' : ' ';
    }
  }
  return out;
}

}  // namespace bnet
