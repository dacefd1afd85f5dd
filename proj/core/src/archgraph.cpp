#include "blocknas/archgraph.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "blocknas/error.hpp"

namespace blocknas {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view key, std::string_view value) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ParseError("bad integer '" + std::string(value) + "' for macro key '" + std::string(key) + "'");
  return v;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// Incremental builder over the node list; every helper returns the id of
// the node it appended.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::vector<LayerNode>& nodes) : nodes_(nodes) {}

  int add(LayerNode node) {
    node.id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return nodes_.back().id;
  }

  int input() {
    LayerNode n;
    n.kind = NodeKind::input;
    n.name = "input";
    return add(std::move(n));
  }

  // conv -> BN -> ReLU; returns the ReLU id.
  int conv_bn_relu(const std::string& name, int in, NodeKind kind, int kh, int kw, int stride,
                   int out_channels) {
    LayerNode conv;
    conv.kind = kind;
    conv.name = name;
    conv.inputs = {in};
    conv.kernel_h = kh;
    conv.kernel_w = kw;
    conv.stride = stride;
    conv.out_channels = out_channels;
    const int c = add(std::move(conv));
    return bn_relu(name, c);
  }

  int bn_relu(const std::string& conv_name, int in) {
    const std::string prefix = conv_name.substr(0, conv_name.rfind('.') + 1);
    const std::string leaf = conv_name.substr(conv_name.rfind('.') + 1);
    LayerNode bn;
    bn.kind = NodeKind::batch_norm;
    bn.name = prefix + leaf + "_bn";
    bn.inputs = {in};
    const int b = add(std::move(bn));
    LayerNode r;
    r.kind = NodeKind::relu;
    r.name = prefix + leaf + "_relu";
    r.inputs = {b};
    return add(std::move(r));
  }

  int branch(const std::string& prefix, int in, const BranchOp& op, int width) {
    const int k = op.kernel();
    switch (op.kind()) {
      case OpKind::conv:
        return conv_bn_relu(prefix + ".conv", in, NodeKind::conv2d, k, k, 1, width);
      case OpKind::rc_conv: {
        const int col = conv_bn_relu(prefix + ".col", in, NodeKind::conv2d, k, 1, 1, width);
        return conv_bn_relu(prefix + ".row", col, NodeKind::conv2d, 1, k, 1, width);
      }
      case OpKind::sp_conv: {
        const int dw = conv_bn_relu(prefix + ".dw", in, NodeKind::depthwise_conv, k, k, 1, 0);
        return conv_bn_relu(prefix + ".pw", dw, NodeKind::conv2d, 1, 1, 1, width);
      }
    }
    throw ConfigError("invalid branch kind");
  }

  int block(const std::string& prefix, int in, const BlockConfig& cfg, int channels, bool reduce) {
    const int width = channels / 4;
    const int stride = reduce ? 2 : 1;
    const int entry = conv_bn_relu(prefix + ".entry", in, NodeKind::conv2d, 1, 1, stride, width);
    LayerNode comb;
    comb.kind = NodeKind::combine;
    comb.name = prefix + ".combine";
    comb.combiner = cfg.combiner();
    for (std::size_t i = 0; i < cfg.branches().size(); ++i)
      comb.inputs.push_back(branch(prefix + ".br" + std::to_string(i), entry, cfg.branches()[i], width));
    const int merged = add(std::move(comb));
    const int exit = conv_bn_relu(prefix + ".exit", merged, NodeKind::conv2d, 1, 1, 1, channels);
    int shortcut = in;
    if (reduce) shortcut = conv_bn_relu(prefix + ".short", in, NodeKind::conv2d, 1, 1, 2, channels);
    LayerNode sum;
    sum.kind = NodeKind::residual_add;
    sum.name = prefix + ".add";
    sum.inputs = {exit, shortcut};
    return add(std::move(sum));
  }

 private:
  std::vector<LayerNode>& nodes_;
};

Shape3 conv_output(const Shape3& in, const LayerNode& n, int channels) {
  return {ceil_div(in.height, n.stride), ceil_div(in.width, n.stride), channels};
}

}  // namespace

void MacroConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("macro config: " + msg); };
  if (stages < 1) fail("stages must be >= 1");
  if (repeats < 1) fail("repeats n must be >= 1");
  if (initial_filters < 1) fail("initial_filters must be >= 1");
  if (initial_filters % 4 != 0)
    fail("initial_filters " + std::to_string(initial_filters) + " not divisible by 4");
  if (channels < 1) fail("input channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (stages > 16) fail("stages must be <= 16");
  const int min_extent = 1 << (stages - 1);
  if (height < min_extent || width < min_extent)
    fail("input " + std::to_string(height) + "x" + std::to_string(width) + " exhausted by " +
         std::to_string(stages - 1) + " reductions (need >= " + std::to_string(min_extent) + ")");
}

MacroConfig parse_macro(std::string_view text, const MacroConfig& base) {
  MacroConfig m = base;
  std::string_view rest = trim(text);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    std::string_view item = trim(rest.substr(0, comma));
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ParseError("macro entry '" + std::string(item) + "' is not key=value");
    const std::string_view key = trim(item.substr(0, eq));
    const std::string_view value = trim(item.substr(eq + 1));
    if (key == "stages") {
      m.stages = parse_int(key, value);
    } else if (key == "n" || key == "repeats") {
      m.repeats = parse_int(key, value);
    } else if (key == "filters" || key == "initial_filters") {
      m.initial_filters = parse_int(key, value);
    } else if (key == "classes" || key == "num_classes") {
      m.num_classes = parse_int(key, value);
    } else if (key == "input") {
      const auto x1 = value.find('x');
      const auto x2 = x1 == std::string_view::npos ? x1 : value.find('x', x1 + 1);
      if (x2 == std::string_view::npos) throw ParseError("macro input '" + std::string(value) + "' is not HxWxC");
      m.height = parse_int(key, value.substr(0, x1));
      m.width = parse_int(key, value.substr(x1 + 1, x2 - x1 - 1));
      m.channels = parse_int(key, value.substr(x2 + 1));
    } else {
      throw ParseError("unknown macro key '" + std::string(key) + "'");
    }
  }
  m.validate();
  return m;
}

std::string format_macro(const MacroConfig& m) {
  return "stages=" + std::to_string(m.stages) + ",n=" + std::to_string(m.repeats) +
         ",filters=" + std::to_string(m.initial_filters) + ",input=" + std::to_string(m.height) + "x" +
         std::to_string(m.width) + "x" + std::to_string(m.channels) +
         ",classes=" + std::to_string(m.num_classes);
}

nlohmann::json macro_to_json(const MacroConfig& m) {
  return {{"stages", m.stages},   {"repeats", m.repeats}, {"initial_filters", m.initial_filters},
          {"height", m.height},   {"width", m.width},     {"channels", m.channels},
          {"num_classes", m.num_classes}};
}

MacroConfig macro_from_json(const nlohmann::json& j) {
  MacroConfig m;
  try {
    m.stages = j.at("stages").get<int>();
    m.repeats = j.at("repeats").get<int>();
    m.initial_filters = j.at("initial_filters").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.channels = j.at("channels").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("macro config: ") + e.what());
  }
  m.validate();
  return m;
}

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::input: return "input";
    case NodeKind::stem_conv: return "stem_conv";
    case NodeKind::conv2d: return "conv2d";
    case NodeKind::depthwise_conv: return "depthwise_conv";
    case NodeKind::batch_norm: return "batch_norm";
    case NodeKind::relu: return "relu";
    case NodeKind::combine: return "combine";
    case NodeKind::residual_add: return "residual_add";
    case NodeKind::global_avg_pool: return "global_avg_pool";
    case NodeKind::dense: return "dense";
    case NodeKind::softmax: return "softmax";
  }
  return "?";
}

std::string Shape3::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

ArchGraph build_architecture(const BlockConfig& block, const MacroConfig& macro) {
  macro.validate();
  ArchGraph g{block, macro, {}, -1, -1, 0, 0};
  GraphBuilder b(g.nodes);

  const int in = b.input();
  int x = b.conv_bn_relu("stem.conv", in, NodeKind::stem_conv, 3, 3, 1, macro.initial_filters);
  for (int s = 1; s <= macro.stages; ++s) {
    const int channels = macro.initial_filters << (s - 1);
    for (int r = 0; r < macro.repeats; ++r) {
      const bool reduce = s > 1 && r == 0;
      x = b.block("s" + std::to_string(s) + ".b" + std::to_string(r), x, block, channels, reduce);
    }
  }
  LayerNode gap;
  gap.kind = NodeKind::global_avg_pool;
  gap.name = "head.gap";
  gap.inputs = {x};
  const int pooled = b.add(std::move(gap));
  LayerNode dense;
  dense.kind = NodeKind::dense;
  dense.name = "head.dense";
  dense.inputs = {pooled};
  dense.out_channels = macro.num_classes;
  g.logits_id = b.add(std::move(dense));
  LayerNode sm;
  sm.kind = NodeKind::softmax;
  sm.name = "head.softmax";
  sm.inputs = {g.logits_id};
  g.output_id = b.add(std::move(sm));

  infer_shapes(g);
  return g;
}

void infer_shapes(ArchGraph& g) {
  int softmax_count = 0;
  for (auto& n : g.nodes) {
    for (int in : n.inputs) {
      if (in < 0 || in >= n.id)
        throw ShapeError("node " + n.name + " reads node " + std::to_string(in) +
                         " which does not precede it");
    }
    auto in_shape = [&](std::size_t i) -> const Shape3& {
      return g.nodes[static_cast<std::size_t>(n.inputs.at(i))].shape;
    };
    auto in_name = [&](std::size_t i) -> const std::string& {
      return g.nodes[static_cast<std::size_t>(n.inputs.at(i))].name;
    };
    auto require_inputs = [&](std::size_t count) {
      if (n.inputs.size() != count)
        throw ShapeError("node " + n.name + " expects " + std::to_string(count) + " inputs, has " +
                         std::to_string(n.inputs.size()));
    };

    switch (n.kind) {
      case NodeKind::input:
        require_inputs(0);
        n.shape = {g.macro.height, g.macro.width, g.macro.channels};
        break;
      case NodeKind::stem_conv:
      case NodeKind::conv2d:
        require_inputs(1);
        n.shape = conv_output(in_shape(0), n, n.out_channels);
        break;
      case NodeKind::depthwise_conv:
        require_inputs(1);
        n.shape = conv_output(in_shape(0), n, in_shape(0).channels);
        break;
      case NodeKind::batch_norm:
      case NodeKind::relu:
        require_inputs(1);
        n.shape = in_shape(0);
        break;
      case NodeKind::combine: {
        if (n.inputs.empty()) throw ShapeError("combine node " + n.name + " has no inputs");
        Shape3 out = in_shape(0);
        for (std::size_t i = 1; i < n.inputs.size(); ++i) {
          const Shape3& s = in_shape(i);
          if (is_additive(n.combiner)) {
            if (!(s == in_shape(0)))
              throw ShapeError("combine " + n.name + ": " + in_name(0) + " has shape " + in_shape(0).str() +
                               " but " + in_name(i) + " has shape " + s.str());
          } else {
            if (s.height != out.height || s.width != out.width)
              throw ShapeError("concat " + n.name + ": " + in_name(0) + " has shape " + in_shape(0).str() +
                               " but " + in_name(i) + " has shape " + s.str());
            out.channels += s.channels;
          }
        }
        n.shape = out;
        break;
      }
      case NodeKind::residual_add:
        require_inputs(2);
        if (!(in_shape(0) == in_shape(1)))
          throw ShapeError("residual add " + n.name + ": " + in_name(0) + " has shape " + in_shape(0).str() +
                           " but " + in_name(1) + " has shape " + in_shape(1).str());
        n.shape = in_shape(0);
        break;
      case NodeKind::global_avg_pool:
        require_inputs(1);
        n.shape = {1, 1, in_shape(0).channels};
        break;
      case NodeKind::dense:
        require_inputs(1);
        n.shape = {1, 1, n.out_channels};
        break;
      case NodeKind::softmax:
        require_inputs(1);
        n.shape = in_shape(0);
        ++softmax_count;
        break;
    }
    if (n.shape.height <= 0 || n.shape.width <= 0 || n.shape.channels <= 0)
      throw ShapeError("node " + n.name + " has empty shape " + n.shape.str());
  }
  if (softmax_count != 1) throw ShapeError("graph must have exactly one softmax output");
  if (g.output_id >= 0 && g.node(g.output_id).shape.channels != g.macro.num_classes)
    throw ShapeError("softmax width differs from num_classes");
  g.total_params = count_params(g);
  g.total_macs = count_macs(g);
}

std::uint64_t node_params(const ArchGraph& g, const LayerNode& n) {
  auto in_channels = [&]() -> std::uint64_t {
    return static_cast<std::uint64_t>(g.node(n.inputs.at(0)).shape.channels);
  };
  const auto kernel = static_cast<std::uint64_t>(n.kernel_h) * static_cast<std::uint64_t>(n.kernel_w);
  switch (n.kind) {
    case NodeKind::stem_conv:
    case NodeKind::conv2d:
      return kernel * in_channels() * static_cast<std::uint64_t>(n.out_channels);
    case NodeKind::depthwise_conv:
      return kernel * in_channels();
    case NodeKind::batch_norm:
      return 2 * static_cast<std::uint64_t>(n.shape.channels);
    case NodeKind::dense:
      return in_channels() * static_cast<std::uint64_t>(n.out_channels) +
             static_cast<std::uint64_t>(n.out_channels);
    default:
      return 0;
  }
}

std::uint64_t node_macs(const ArchGraph& g, const LayerNode& n) {
  const auto positions = static_cast<std::uint64_t>(n.shape.height) * static_cast<std::uint64_t>(n.shape.width);
  switch (n.kind) {
    case NodeKind::stem_conv:
    case NodeKind::conv2d:
    case NodeKind::depthwise_conv:
      return node_params(g, n) * positions;
    case NodeKind::dense:
      return static_cast<std::uint64_t>(g.node(n.inputs.at(0)).shape.channels) *
             static_cast<std::uint64_t>(n.out_channels);
    default:
      return 0;
  }
}

std::uint64_t count_params(const ArchGraph& g) {
  std::uint64_t total = 0;
  for (const auto& n : g.nodes) total += node_params(g, n);
  return total;
}

std::uint64_t count_macs(const ArchGraph& g) {
  std::uint64_t total = 0;
  for (const auto& n : g.nodes) total += node_macs(g, n);
  return total;
}

std::string emit_graph_description(const ArchGraph& g) {
  std::ostringstream out;
  out << "# blocknas graph v1\n";
  out << "block " << format_config(g.block) << "\n";
  out << "macro " << format_macro(g.macro) << "\n";
  char line[256];
  for (const auto& n : g.nodes) {
    std::string op(to_string(n.kind));
    if (is_convolution(n.kind))
      op += " k" + std::to_string(n.kernel_h) + "x" + std::to_string(n.kernel_w) + " s" + std::to_string(n.stride);
    if (n.kind == NodeKind::combine) op += " " + std::string(to_string(n.combiner));
    std::string inputs;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i > 0) inputs += ',';
      inputs += std::to_string(n.inputs[i]);
    }
    if (inputs.empty()) inputs = "-";
    std::snprintf(line, sizeof(line), "%4d %-24s %-26s <- %-12s %-12s params=%llu macs=%llu\n", n.id,
                  n.name.c_str(), op.c_str(), inputs.c_str(), n.shape.str().c_str(),
                  static_cast<unsigned long long>(node_params(g, n)),
                  static_cast<unsigned long long>(node_macs(g, n)));
    out << line;
  }
  out << "totals nodes=" << g.nodes.size() << " params=" << count_params(g) << " macs=" << count_macs(g) << "\n";
  return out.str();
}

std::uint64_t graph_hash(const ArchGraph& g) { return fnv1a64(emit_graph_description(g)); }

}  // namespace blocknas
