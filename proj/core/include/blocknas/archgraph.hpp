#pragma once

// Compiles a BlockConfig and a MacroConfig into a flat, topologically
// ordered layer graph with inferred shapes and cost totals.
//
// Topology:
//   input -> stem 3x3 conv/BN/ReLU at initial_filters
//   stage s = 1..stages, channels C_s = initial_filters * 2^(s-1), n blocks:
//     entry 1x1 conv to C_s/4 (stride 2 in the first block of stages >= 2)
//     B parallel branches, each conv(k) | rc_conv(k) | sp_conv(k)
//     combine (concat | add_det | add_stc)
//     exit 1x1 conv to C_s
//     residual add with identity, or with a 1x1 stride-2 conv to C_s on
//     the block input for reduction blocks
//   every convolution is followed by BN and ReLU; the add is not.
//   head: global average pool -> dense(num_classes) -> softmax

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/blockspace.hpp"

namespace blocknas {

struct MacroConfig {
  int stages = 3;
  int repeats = 9;
  int initial_filters = 64;
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;

  // Throws ConfigError on any invariant violation.
  void validate() const;

  friend bool operator==(const MacroConfig&, const MacroConfig&) = default;
};

// `stages=3,n=9,filters=64,input=32x32x3,classes=10`; omitted keys keep
// the values of `base`.
MacroConfig parse_macro(std::string_view text, const MacroConfig& base = {});
std::string format_macro(const MacroConfig& macro);
nlohmann::json macro_to_json(const MacroConfig& macro);
MacroConfig macro_from_json(const nlohmann::json& j);

enum class NodeKind : std::uint8_t {
  input,
  stem_conv,
  conv2d,
  depthwise_conv,
  batch_norm,
  relu,
  combine,
  residual_add,
  global_avg_pool,
  dense,
  softmax,
};

std::string_view to_string(NodeKind kind);

inline bool is_convolution(NodeKind k) {
  return k == NodeKind::stem_conv || k == NodeKind::conv2d || k == NodeKind::depthwise_conv;
}

struct Shape3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::int64_t elements() const {
    return static_cast<std::int64_t>(height) * width * channels;
  }
  std::string str() const;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct LayerNode {
  int id = 0;
  NodeKind kind = NodeKind::input;
  std::string name;
  std::vector<int> inputs;
  // Convolutions: kernel extents, stride, output channels.
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  // Convolutions and dense: output channels. Depthwise keeps its input width.
  int out_channels = 0;
  CombinerKind combiner = CombinerKind::concat;

  // Filled by infer_shapes.
  Shape3 shape;
};

struct ArchGraph {
  BlockConfig block;
  MacroConfig macro;
  std::vector<LayerNode> nodes;
  // Index of the dense node feeding the softmax and of the softmax itself.
  int logits_id = -1;
  int output_id = -1;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;

  const LayerNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
};

ArchGraph build_architecture(const BlockConfig& block, const MacroConfig& macro);

// Annotates every node with its output shape and refreshes the totals.
// Checks topological order and per-kind shape agreement; throws ShapeError
// naming the offending nodes.
void infer_shapes(ArchGraph& graph);

// Parameter and multiply-accumulate counts of a single shape-annotated node.
std::uint64_t node_params(const ArchGraph& graph, const LayerNode& node);
std::uint64_t node_macs(const ArchGraph& graph, const LayerNode& node);

std::uint64_t count_params(const ArchGraph& graph);
std::uint64_t count_macs(const ArchGraph& graph);

// Deterministic listing: one line per node plus a totals line.
std::string emit_graph_description(const ArchGraph& graph);

// FNV-1a of the description; stored in checkpoints.
std::uint64_t graph_hash(const ArchGraph& graph);

}  // namespace blocknas
