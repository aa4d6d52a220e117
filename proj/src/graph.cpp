#include "bnet/graph.hpp"

#include <algorithm>
#include <stdexcept>

#include "bnet/conv.hpp"

namespace bnet {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseConv: return "dwconv";
    case LayerKind::Norm: return "norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Add: return "add";
    case LayerKind::Linear: return "linear";
  }
  return "?";
}

PositionSet parse_positions(const std::string& text) {
  PositionSet out;
  for (char ch : text) {
    switch (ch) {
      case 'a': case 'A': out.insert(PlugPosition::A); break;
      case 'b': case 'B': out.insert(PlugPosition::B); break;
      case 'c': case 'C': out.insert(PlugPosition::C); break;
      case ',': case ' ': break;
      default:
        throw std::invalid_argument("bad position '" + std::string(1, ch) +
                                    "' (expected subsets of a,b,c)");
    }
  }
  return out;
}

NormSelection parse_norm_selection(const std::string& norm, const std::string& positions,
                                   int gn_groups) {
  NormSelection sel;
  sel.positions = parse_positions(positions.empty() ? "c" : positions);
  const NormSpec bn{NormKind::BatchNorm, 1, 1, 1};
  const NormSpec gn{NormKind::GroupNorm, 1, 1, gn_groups};
  if (norm == "bn") {
    sel.base = bn;
    sel.plug = bn;
    sel.positions.clear();
  } else if (norm == "bnet1" || norm == "bnet3" || norm == "bnet5" || norm == "bnet7") {
    sel.base = bn;
    sel.plug = NormSpec{NormKind::Bnet, norm[4] - '0', 1, 1};
  } else if (norm == "bnet3d2") {
    sel.base = bn;
    sel.plug = NormSpec{NormKind::Bnet, 3, 2, 1};
  } else if (norm == "gn") {
    sel.base = gn;
    sel.plug = gn;
    sel.positions.clear();
  } else if (norm == "gnet3") {
    sel.base = gn;
    sel.plug = NormSpec{NormKind::Gnet, 3, 1, gn_groups};
  } else if (norm == "bnconv") {
    sel.base = bn;
    sel.plug = bn;
    sel.positions.clear();
    sel.extra_conv_after_c = true;
  } else {
    throw std::invalid_argument("unknown norm '" + norm + "'");
  }
  return sel;
}

std::int64_t layer_param_count(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::Conv:
      return d.c_out * d.c_in * d.k * d.k;
    case LayerKind::DepthwiseConv:
      return d.c_out * d.k * d.k + d.c_out;
    case LayerKind::Norm:
      // Affine kinds store gamma + beta; conv kinds store the kernel + bias.
      if (d.norm.kind == NormKind::BatchNorm || d.norm.kind == NormKind::GroupNorm) {
        return 2 * d.c_out;
      }
      return d.c_out * d.norm.k * d.norm.k + d.c_out;
    case LayerKind::Linear:
      return d.in_features * d.out_features + d.out_features;
    default:
      return 0;
  }
}

int LayerGraph::find_node(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::int64_t LayerGraph::total_params() const {
  std::int64_t total = 0;
  for (const auto& n : nodes) total += layer_param_count(n);
  return total;
}

void validate_graph(const LayerGraph& g) {
  if (g.nodes.empty() || g.nodes[0].kind != LayerKind::Input) {
    throw std::invalid_argument("graph must start with an input node");
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const LayerDesc& d = g.nodes[i];
    const auto check_in = [&](int in) {
      if (in < 0 || in >= static_cast<int>(i)) {
        throw std::invalid_argument("node '" + d.name + "' has a dangling input");
      }
    };
    if (d.kind != LayerKind::Input) check_in(d.in0);
    if (d.kind == LayerKind::Add) {
      check_in(d.in1);
      const Shape4& a = g.nodes[static_cast<std::size_t>(d.in0)].out;
      const Shape4& b = g.nodes[static_cast<std::size_t>(d.in1)].out;
      if (!(a == b)) {
        throw std::invalid_argument("residual add '" + d.name + "' with mismatched shapes " +
                                    to_string(a) + " vs " + to_string(b));
      }
    }
    if (d.kind != LayerKind::Input) {
      const Shape4& in = g.nodes[static_cast<std::size_t>(d.in0)].out;
      if (d.kind == LayerKind::Conv && in.c != d.c_in) {
        throw std::invalid_argument("conv '" + d.name + "' channel mismatch");
      }
      if (d.kind == LayerKind::Linear && (in.h != 1 || in.w != 1 || in.c != d.in_features)) {
        throw std::invalid_argument("linear '" + d.name + "' expects pooled (c,1,1) input");
      }
    }
  }
  if (g.output < 0 || g.output >= static_cast<int>(g.nodes.size())) {
    throw std::invalid_argument("graph output node out of range");
  }
}

GraphBuilder::GraphBuilder(Shape4 input_shape) {
  if (input_shape.numel() <= 0) throw std::invalid_argument("empty graph input shape");
  g_.input = input_shape;
  LayerDesc d;
  d.kind = LayerKind::Input;
  d.name = "input";
  d.out = input_shape;
  d.c_out = input_shape.c;
  g_.nodes.push_back(std::move(d));
}

int GraphBuilder::push(LayerDesc d) {
  g_.nodes.push_back(std::move(d));
  return static_cast<int>(g_.nodes.size()) - 1;
}

int GraphBuilder::add_conv(const std::string& name, int in, std::int64_t c_out, int k,
                           int stride, int padding) {
  const Shape4& s = node(in).out;
  LayerDesc d;
  d.kind = LayerKind::Conv;
  d.name = name;
  d.in0 = in;
  d.c_in = s.c;
  d.c_out = c_out;
  d.k = k;
  d.stride = stride;
  d.padding = padding;
  d.out = {s.n, c_out, conv_out_dim(s.h, k, stride, padding), conv_out_dim(s.w, k, stride, padding)};
  if (d.out.h < 1 || d.out.w < 1) {
    throw std::invalid_argument("conv '" + name + "' output would be empty");
  }
  return push(std::move(d));
}

int GraphBuilder::add_dwconv(const std::string& name, int in, int k, int dilation) {
  if (k % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  const Shape4& s = node(in).out;
  LayerDesc d;
  d.kind = LayerKind::DepthwiseConv;
  d.name = name;
  d.in0 = in;
  d.c_in = s.c;
  d.c_out = s.c;
  d.k = k;
  d.dilation = dilation;
  d.padding = dilation * (k - 1) / 2;
  d.has_bias = true;
  d.out = s;
  return push(std::move(d));
}

int GraphBuilder::add_norm(const std::string& name, int in, const NormSpec& spec) {
  const Shape4& s = node(in).out;
  if ((spec.kind == NormKind::GroupNorm || spec.kind == NormKind::Gnet) &&
      s.c % spec.groups != 0) {
    throw std::invalid_argument("norm '" + name + "': channels not divisible by groups");
  }
  LayerDesc d;
  d.kind = LayerKind::Norm;
  d.name = name;
  d.in0 = in;
  d.c_in = s.c;
  d.c_out = s.c;
  d.norm = spec;
  d.out = s;
  return push(std::move(d));
}

int GraphBuilder::add_relu(const std::string& name, int in) {
  LayerDesc d;
  d.kind = LayerKind::Relu;
  d.name = name;
  d.in0 = in;
  d.c_in = d.c_out = node(in).out.c;
  d.out = node(in).out;
  return push(std::move(d));
}

int GraphBuilder::add_maxpool(const std::string& name, int in, int k, int stride, int padding) {
  const Shape4& s = node(in).out;
  LayerDesc d;
  d.kind = LayerKind::MaxPool;
  d.name = name;
  d.in0 = in;
  d.c_in = d.c_out = s.c;
  d.k = k;
  d.stride = stride;
  d.padding = padding;
  d.out = {s.n, s.c, conv_out_dim(s.h, k, stride, padding), conv_out_dim(s.w, k, stride, padding)};
  return push(std::move(d));
}

int GraphBuilder::add_global_avg_pool(const std::string& name, int in) {
  const Shape4& s = node(in).out;
  LayerDesc d;
  d.kind = LayerKind::GlobalAvgPool;
  d.name = name;
  d.in0 = in;
  d.c_in = d.c_out = s.c;
  d.out = {s.n, s.c, 1, 1};
  return push(std::move(d));
}

int GraphBuilder::add_residual_add(const std::string& name, int a, int b) {
  LayerDesc d;
  d.kind = LayerKind::Add;
  d.name = name;
  d.in0 = a;
  d.in1 = b;
  d.c_in = d.c_out = node(a).out.c;
  d.out = node(a).out;
  if (!(node(a).out == node(b).out)) {
    throw std::invalid_argument("residual add '" + name + "' with mismatched shapes");
  }
  return push(std::move(d));
}

int GraphBuilder::add_linear(const std::string& name, int in, std::int64_t out_features) {
  const Shape4& s = node(in).out;
  if (s.h != 1 || s.w != 1) {
    throw std::invalid_argument("linear '" + name + "' expects pooled (c,1,1) input");
  }
  LayerDesc d;
  d.kind = LayerKind::Linear;
  d.name = name;
  d.in0 = in;
  d.in_features = s.c;
  d.out_features = out_features;
  d.c_in = s.c;
  d.c_out = out_features;
  d.has_bias = true;
  d.out = {s.n, out_features, 1, 1};
  return push(std::move(d));
}

LayerGraph GraphBuilder::finish(int output_node, int num_classes) {
  g_.output = output_node;
  g_.num_classes = num_classes;
  validate_graph(g_);
  return g_;
}

int append_bottleneck_block(GraphBuilder& b, const std::string& prefix, int in_node,
                            std::int64_t in_channels, std::int64_t width, int stride,
                            const std::map<PlugPosition, NormSpec>& norm_map,
                            const NormSpec& ds_norm, bool extra_conv_after_c, int expansion) {
  if (width < 1) throw std::invalid_argument("bottleneck width must be >= 1");
  for (PlugPosition p : {PlugPosition::A, PlugPosition::B, PlugPosition::C}) {
    if (norm_map.find(p) == norm_map.end()) {
      throw std::invalid_argument("bottleneck '" + prefix + "': norm map is missing a slot");
    }
  }
  const std::int64_t out_channels = width * expansion;

  int x = b.add_conv(prefix + ".conv1", in_node, width, 1, 1, 0);
  x = b.add_norm(prefix + ".norm_a", x, norm_map.at(PlugPosition::A));
  x = b.add_relu(prefix + ".relu1", x);
  x = b.add_conv(prefix + ".conv2", x, width, 3, stride, 1);
  x = b.add_norm(prefix + ".norm_b", x, norm_map.at(PlugPosition::B));
  x = b.add_relu(prefix + ".relu2", x);
  x = b.add_conv(prefix + ".conv3", x, out_channels, 1, 1, 0);
  x = b.add_norm(prefix + ".norm_c", x, norm_map.at(PlugPosition::C));
  if (extra_conv_after_c) {
    x = b.add_relu(prefix + ".post_relu", x);
    x = b.add_dwconv(prefix + ".post_dwconv", x, 3, 1);
  }

  int skip = in_node;
  if (stride != 1 || in_channels != out_channels) {
    skip = b.add_conv(prefix + ".ds.conv", in_node, out_channels, 1, stride, 0);
    skip = b.add_norm(prefix + ".ds.norm", skip, ds_norm);
  }
  x = b.add_residual_add(prefix + ".add", x, skip);
  return b.add_relu(prefix + ".relu3", x);
}

int append_basic_block(GraphBuilder& b, const std::string& prefix, int in_node,
                       std::int64_t in_channels, std::int64_t width, int stride,
                       const NormSpec& first_norm, const NormSpec& last_norm,
                       const NormSpec& ds_norm) {
  int x = b.add_conv(prefix + ".conv1", in_node, width, 3, stride, 1);
  x = b.add_norm(prefix + ".norm1", x, first_norm);
  x = b.add_relu(prefix + ".relu1", x);
  x = b.add_conv(prefix + ".conv2", x, width, 3, 1, 1);
  x = b.add_norm(prefix + ".norm2", x, last_norm);

  int skip = in_node;
  if (stride != 1 || in_channels != width) {
    skip = b.add_conv(prefix + ".ds.conv", in_node, width, 1, stride, 0);
    skip = b.add_norm(prefix + ".ds.norm", skip, ds_norm);
  }
  x = b.add_residual_add(prefix + ".add", x, skip);
  return b.add_relu(prefix + ".relu2", x);
}

namespace {

std::map<PlugPosition, NormSpec> slot_map(const NormSelection& sel) {
  std::map<PlugPosition, NormSpec> m;
  for (PlugPosition p : {PlugPosition::A, PlugPosition::B, PlugPosition::C}) {
    m[p] = sel.positions.count(p) ? sel.plug : sel.base;
  }
  return m;
}

}  // namespace

LayerGraph build_mini_resnet(const MiniNetConfig& cfg) {
  if (cfg.base_width < 1) throw std::invalid_argument("base width must be >= 1");
  if (cfg.input_hw < 8) throw std::invalid_argument("mini net input must be at least 8x8");
  for (int d : cfg.depths) {
    if (d < 1) throw std::invalid_argument("stage depth must be >= 1");
  }
  const auto norm_map = slot_map(cfg.norms);

  GraphBuilder b({1, 3, cfg.input_hw, cfg.input_hw});
  int x = b.add_conv("stem.conv", 0, cfg.base_width, 3, 1, 1);
  x = b.add_norm("stem.norm", x, cfg.norms.base);
  x = b.add_relu("stem.relu", x);

  std::int64_t in_ch = cfg.base_width;
  for (int stage = 0; stage < 3; ++stage) {
    const std::int64_t width = static_cast<std::int64_t>(cfg.base_width) << stage;
    for (int blk = 0; blk < cfg.depths[static_cast<std::size_t>(stage)]; ++blk) {
      const int stride = (stage > 0 && blk == 0) ? 2 : 1;
      const std::string prefix = "s" + std::to_string(stage + 1) + ".b" + std::to_string(blk + 1);
      x = append_bottleneck_block(b, prefix, x, in_ch, width, stride, norm_map, cfg.norms.base,
                                  cfg.norms.extra_conv_after_c);
      in_ch = width * 4;
    }
  }
  x = b.add_global_avg_pool("head.pool", x);
  x = b.add_linear("head.fc", x, cfg.num_classes);
  return b.finish(x, cfg.num_classes);
}

LayerGraph build_bn_plus_conv_variant(MiniNetConfig cfg) {
  cfg.norms.base = NormSpec{NormKind::BatchNorm, 1, 1, 1};
  cfg.norms.plug = cfg.norms.base;
  cfg.norms.positions.clear();
  cfg.norms.extra_conv_after_c = true;
  return build_mini_resnet(cfg);
}

LayerGraph build_resnet_shape_graph(int variant, const NormSelection& norms, int input_hw) {
  if (variant != 18 && variant != 50) {
    throw std::invalid_argument("unknown resnet variant " + std::to_string(variant));
  }
  const auto norm_map = slot_map(norms);

  GraphBuilder b({1, 3, input_hw, input_hw});
  int x = b.add_conv("stem.conv", 0, 64, 7, 2, 3);
  x = b.add_norm("stem.norm", x, norms.base);
  x = b.add_relu("stem.relu", x);
  x = b.add_maxpool("stem.maxpool", x, 3, 2, 1);

  const std::array<int, 4> depths = variant == 18 ? std::array<int, 4>{2, 2, 2, 2}
                                                  : std::array<int, 4>{3, 4, 6, 3};
  const int expansion = variant == 18 ? 1 : 4;
  std::int64_t in_ch = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t width = static_cast<std::int64_t>(64) << stage;
    for (int blk = 0; blk < depths[static_cast<std::size_t>(stage)]; ++blk) {
      const int stride = (stage > 0 && blk == 0) ? 2 : 1;
      const std::string prefix = "s" + std::to_string(stage + 1) + ".b" + std::to_string(blk + 1);
      if (variant == 18) {
        // Plug position maps onto the two slots: A -> first norm, C -> last.
        const NormSpec first =
            norms.positions.count(PlugPosition::A) ? norms.plug : norms.base;
        const NormSpec last =
            norms.positions.count(PlugPosition::C) ? norms.plug : norms.base;
        x = append_basic_block(b, prefix, x, in_ch, width, stride, first, last, norms.base);
        in_ch = width;
      } else {
        x = append_bottleneck_block(b, prefix, x, in_ch, width, stride, norm_map, norms.base,
                                    norms.extra_conv_after_c, expansion);
        in_ch = width * expansion;
      }
    }
  }
  x = b.add_global_avg_pool("head.pool", x);
  x = b.add_linear("head.fc", x, 1000);
  return b.finish(x, 1000);
}

}  // namespace bnet
