#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bnet/norm.hpp"
#include "bnet/tensor.hpp"

namespace bnet {

enum class LayerKind {
  Input,
  Conv,
  DepthwiseConv,
  Norm,
  Relu,
  MaxPool,
  GlobalAvgPool,
  Add,
  Linear,
};

const char* layer_kind_name(LayerKind k);

// Runtime description of a norm layer; instantiated as NormState<T> when a
// network is built, or consumed shape-only by the cost counters.
struct NormSpec {
  NormKind kind = NormKind::BatchNorm;
  int k = 1;
  int dilation = 1;
  int groups = 8;

  bool operator==(const NormSpec&) const = default;
};

// Which norm slots of a residual block the plug-in norm replaces. In a
// bottleneck, A and C sit after the 1x1 convs and B after the 3x3; in a
// basic block, A maps to the first slot and C to the last.
enum class PlugPosition { A, B, C };

using PositionSet = std::set<PlugPosition>;

PositionSet parse_positions(const std::string& text);  // e.g. "c" or "a,b,c"

struct NormSelection {
  NormSpec base;                   // slots not replaced (also stem/downsample)
  NormSpec plug;                   // slots named in `positions`
  PositionSet positions;
  bool extra_conv_after_c = false; // control variant: BN at C plus relu + dw-conv
};

// Maps a norm name ("bn", "bnet3", "bnet3d2", "gn", "gnet3", "bnconv", ...)
// and a position list to a NormSelection.
NormSelection parse_norm_selection(const std::string& norm, const std::string& positions,
                                   int gn_groups);

struct LayerDesc {
  LayerKind kind = LayerKind::Input;
  std::string name;
  int in0 = -1;
  int in1 = -1;              // Add only
  Shape4 out{};              // at the graph's reference input (n == 1)

  // geometry / parameter shapes
  std::int64_t c_in = 0, c_out = 0;
  int k = 0, stride = 1, padding = 0, dilation = 1;
  bool has_bias = false;     // DepthwiseConv and Linear carry a bias
  NormSpec norm;             // kind == Norm
  std::int64_t in_features = 0, out_features = 0;
};

std::int64_t layer_param_count(const LayerDesc&);

// An ordered network description used both for execution and for pure
// shape-level counting.
struct LayerGraph {
  Shape4 input{};
  int num_classes = 0;
  std::vector<LayerDesc> nodes;
  int output = -1;

  int find_node(const std::string& name) const;  // -1 if absent
  std::int64_t total_params() const;
};

void validate_graph(const LayerGraph& g);

// ---- builders --------------------------------------------------------

class GraphBuilder {
 public:
  explicit GraphBuilder(Shape4 input_shape);

  int add_conv(const std::string& name, int in, std::int64_t c_out, int k, int stride,
               int padding);
  int add_dwconv(const std::string& name, int in, int k, int dilation);
  int add_norm(const std::string& name, int in, const NormSpec& spec);
  int add_relu(const std::string& name, int in);
  int add_maxpool(const std::string& name, int in, int k, int stride, int padding);
  int add_global_avg_pool(const std::string& name, int in);
  int add_residual_add(const std::string& name, int a, int b);
  int add_linear(const std::string& name, int in, std::int64_t out_features);

  LayerGraph finish(int output_node, int num_classes);
  const LayerDesc& node(int id) const { return g_.nodes[static_cast<std::size_t>(id)]; }

 private:
  int push(LayerDesc d);
  LayerGraph g_;
};

// conv1x1(width) -> A -> relu -> conv3x3(width, stride) -> B -> relu ->
// conv1x1(width * expansion) -> C -> add(skip) -> relu. The map must name
// all three slots. Returns the id of the block's final node.
int append_bottleneck_block(GraphBuilder& b, const std::string& prefix, int in_node,
                            std::int64_t in_channels, std::int64_t width, int stride,
                            const std::map<PlugPosition, NormSpec>& norm_map,
                            const NormSpec& ds_norm, bool extra_conv_after_c,
                            int expansion = 4);

// Two 3x3 convs with two norm slots (ResNet-18 style).
int append_basic_block(GraphBuilder& b, const std::string& prefix, int in_node,
                       std::int64_t in_channels, std::int64_t width, int stride,
                       const NormSpec& first_norm, const NormSpec& last_norm,
                       const NormSpec& ds_norm);

struct MiniNetConfig {
  std::array<int, 3> depths{2, 2, 2};
  int base_width = 16;
  int input_hw = 32;
  int num_classes = 10;
  NormSelection norms;
};

// Desk-scale residual network: 3x3 stem, three bottleneck stages with
// stride 2 between stages, global average pool, linear classifier.
LayerGraph build_mini_resnet(const MiniNetConfig& cfg);

// Full ResNet-18/50 layer list for counting only.
LayerGraph build_resnet_shape_graph(int variant, const NormSelection& norms, int input_hw = 224);

// Control variant: BN everywhere, an extra relu + 3x3 depthwise conv after
// slot C of every bottleneck.
LayerGraph build_bn_plus_conv_variant(MiniNetConfig cfg);

}  // namespace bnet
