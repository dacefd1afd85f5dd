#include "blocknas/network.hpp"

#include <cmath>

namespace blocknas {

template <typename T>
std::size_t ParamStore<T>::add_param(std::string name, Tensor<T> value, bool decay) {
  if (param_index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
  const std::size_t i = params_.size();
  Tensor<T> grad(value.shape());
  Tensor<T> momentum(value.shape());
  param_index_.emplace(name, i);
  params_.push_back({std::move(name), std::move(value), std::move(grad), std::move(momentum), decay});
  return i;
}

template <typename T>
std::size_t ParamStore<T>::add_buffer(std::string name, Tensor<T> value) {
  if (buffer_index_.contains(name)) throw ConfigError("duplicate buffer name " + name);
  const std::size_t i = buffers_.size();
  buffer_index_.emplace(name, i);
  buffers_.push_back({std::move(name), std::move(value)});
  return i;
}

template <typename T>
const Parameter<T>* ParamStore<T>::find_param(const std::string& name) const {
  const auto it = param_index_.find(name);
  return it == param_index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
const StateBuffer<T>* ParamStore<T>::find_buffer(const std::string& name) const {
  const auto it = buffer_index_.find(name);
  return it == buffer_index_.end() ? nullptr : &buffers_[it->second];
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
std::uint64_t ParamStore<T>::element_count() const {
  std::uint64_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

namespace {

template <typename T>
Tensor<T> he_normal(Extents shape, std::size_t fan_in, Random& rng) {
  Tensor<T> t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(sd * rng.normal());
  return t;
}

}  // namespace

template <typename T>
Network<T>::Network(ArchGraph graph, std::uint64_t seed)
    : graph_(std::move(graph)), stochastic_rng_(derive_seed(seed, 0x5354)) {
  Random init(seed);
  const std::size_t count = graph_.nodes.size();
  slots_.assign(count, Slots{});
  acts_.assign(count, Tensor<T>{});
  bn_caches_.assign(count, ops::BatchNormCache<T>{});
  combine_weights_.assign(count, {});
  last_use_.assign(count, -1);
  for (const auto& n : graph_.nodes)
    for (int in : n.inputs) last_use_[static_cast<std::size_t>(in)] = n.id;
  for (const auto& n : graph_.nodes) {
    Slots& s = slots_[static_cast<std::size_t>(n.id)];
    const auto kh = static_cast<std::size_t>(n.kernel_h);
    const auto kw = static_cast<std::size_t>(n.kernel_w);
    switch (n.kind) {
      case NodeKind::stem_conv:
      case NodeKind::conv2d: {
        const auto cin = static_cast<std::size_t>(graph_.node(n.inputs[0]).shape.channels);
        const auto cout = static_cast<std::size_t>(n.out_channels);
        s.weight = static_cast<int>(store_.add_param(n.name + ".w", he_normal<T>({kh, kw, cin, cout}, kh * kw * cin, init), true));
        break;
      }
      case NodeKind::depthwise_conv: {
        const auto c = static_cast<std::size_t>(graph_.node(n.inputs[0]).shape.channels);
        s.weight = static_cast<int>(store_.add_param(n.name + ".w", he_normal<T>({kh, kw, c}, kh * kw, init), true));
        break;
      }
      case NodeKind::batch_norm: {
        const auto c = static_cast<std::size_t>(n.shape.channels);
        s.gamma = static_cast<int>(store_.add_param(n.name + ".gamma", Tensor<T>({c}, T{1}), true));
        s.beta = static_cast<int>(store_.add_param(n.name + ".beta", Tensor<T>({c}, T{0}), true));
        s.running_mean = static_cast<int>(store_.add_buffer(n.name + ".running_mean", Tensor<T>({c}, T{0})));
        s.running_var = static_cast<int>(store_.add_buffer(n.name + ".running_var", Tensor<T>({c}, T{1})));
        break;
      }
      case NodeKind::dense: {
        const auto cin = static_cast<std::size_t>(graph_.node(n.inputs[0]).shape.channels);
        const auto cout = static_cast<std::size_t>(n.out_channels);
        s.weight = static_cast<int>(store_.add_param(n.name + ".w", he_normal<T>({cin, cout}, cin, init), true));
        s.bias = static_cast<int>(store_.add_param(n.name + ".b", Tensor<T>({cout}, T{0}), false));
        break;
      }
      default:
        break;
    }
  }
}

template <typename T>
void Network<T>::check_input(const Tensor<T>& input) const {
  const auto& m = graph_.macro;
  if (input.rank() != 4 || input.dim(0) < 1 || input.dim(1) != static_cast<std::size_t>(m.height) ||
      input.dim(2) != static_cast<std::size_t>(m.width) || input.dim(3) != static_cast<std::size_t>(m.channels))
    throw ShapeError("network input " + format_extents(input.shape()) + " does not match " +
                     std::to_string(m.height) + "x" + std::to_string(m.width) + "x" + std::to_string(m.channels));
}

template <typename T>
std::vector<T> Network<T>::equal_weights(std::size_t count) const {
  return std::vector<T>(count, static_cast<T>(1.0 / static_cast<double>(count)));
}

template <typename T>
Tensor<T> Network<T>::eval_node(const LayerNode& n, std::span<const Tensor<T>> acts) const {
  const Slots& s = slots_[static_cast<std::size_t>(n.id)];
  auto in = [&](std::size_t i) -> const Tensor<T>& { return acts[static_cast<std::size_t>(n.inputs[i])]; };
  switch (n.kind) {
    case NodeKind::input:
      throw ShapeError("input node evaluated without input");
    case NodeKind::stem_conv:
    case NodeKind::conv2d:
      return ops::conv2d(in(0), store_.param(static_cast<std::size_t>(s.weight)).value, n.stride);
    case NodeKind::depthwise_conv:
      return ops::depthwise_conv(in(0), store_.param(static_cast<std::size_t>(s.weight)).value, n.stride);
    case NodeKind::batch_norm:
      return ops::batch_norm_eval(in(0), store_.param(static_cast<std::size_t>(s.gamma)).value,
                                  store_.param(static_cast<std::size_t>(s.beta)).value,
                                  store_.buffer(static_cast<std::size_t>(s.running_mean)).value,
                                  store_.buffer(static_cast<std::size_t>(s.running_var)).value);
    case NodeKind::relu:
      return ops::relu(in(0));
    case NodeKind::combine: {
      std::vector<const Tensor<T>*> inputs;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) inputs.push_back(&in(i));
      if (n.combiner == CombinerKind::concat) return ops::concat_channels<T>(inputs);
      const std::vector<T> w =
          n.combiner == CombinerKind::add_det ? std::vector<T>(inputs.size(), T{1}) : equal_weights(inputs.size());
      return ops::weighted_sum<T>(inputs, w);
    }
    case NodeKind::residual_add: {
      const std::vector<const Tensor<T>*> inputs = {&in(0), &in(1)};
      const std::vector<T> w = {T{1}, T{1}};
      return ops::weighted_sum<T>(inputs, w);
    }
    case NodeKind::global_avg_pool:
      return ops::global_avg_pool(in(0));
    case NodeKind::dense:
      return ops::dense(in(0), store_.param(static_cast<std::size_t>(s.weight)).value,
                        store_.param(static_cast<std::size_t>(s.bias)).value);
    case NodeKind::softmax:
      return ops::softmax(in(0));
  }
  throw ShapeError("unknown node kind");
}

template <typename T>
const Tensor<T>& Network<T>::forward(const Tensor<T>& input, Mode mode) {
  check_input(input);
  for (const auto& n : graph_.nodes) {
    const auto id = static_cast<std::size_t>(n.id);
    const Slots& s = slots_[id];
    if (n.kind == NodeKind::input) {
      acts_[id] = input;
      if (!input.all_finite()) throw NumericError("non-finite value in network input");
      continue;
    }
    if (mode == Mode::train && n.kind == NodeKind::batch_norm) {
      const Tensor<T>& x = acts_[static_cast<std::size_t>(n.inputs[0])];
      acts_[id] = ops::batch_norm_train(x, store_.param(static_cast<std::size_t>(s.gamma)).value,
                                        store_.param(static_cast<std::size_t>(s.beta)).value, bn_caches_[id]);
      ops::update_running_stats(bn_caches_[id], x.size() / x.dim(3),
                                store_.buffer(static_cast<std::size_t>(s.running_mean)).value,
                                store_.buffer(static_cast<std::size_t>(s.running_var)).value);
    } else if (n.kind == NodeKind::combine && n.combiner != CombinerKind::concat) {
      std::vector<const Tensor<T>*> inputs;
      for (int i : n.inputs) inputs.push_back(&acts_[static_cast<std::size_t>(i)]);
      std::vector<T>& w = combine_weights_[id];
      if (n.combiner == CombinerKind::add_det) {
        w.assign(inputs.size(), T{1});
      } else if (mode == Mode::eval) {
        w = equal_weights(inputs.size());
      } else if (!(stochastic_frozen_ && w.size() == inputs.size())) {
        const auto drawn = ops::simplex_weights(inputs.size(), stochastic_rng_);
        w.assign(drawn.begin(), drawn.end());
      }
      acts_[id] = ops::weighted_sum<T>(inputs, w);
    } else {
      acts_[id] = eval_node(n, acts_);
    }
    if (!acts_[id].all_finite()) throw NumericError("non-finite value at node " + n.name);
  }
  has_forward_ = true;
  return acts_[static_cast<std::size_t>(graph_.output_id)];
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& input) const {
  check_input(input);
  std::vector<Tensor<T>> acts(graph_.nodes.size());
  for (const auto& n : graph_.nodes) {
    const auto id = static_cast<std::size_t>(n.id);
    acts[id] = n.kind == NodeKind::input ? input : eval_node(n, acts);
    if (!acts[id].all_finite()) throw NumericError("non-finite value at node " + n.name);
    for (int in : n.inputs)
      if (last_use_[static_cast<std::size_t>(in)] == n.id) acts[static_cast<std::size_t>(in)] = Tensor<T>{};
  }
  return std::move(acts[static_cast<std::size_t>(graph_.output_id)]);
}

template <typename T>
T Network<T>::loss(std::span<const int> labels) const {
  if (!has_forward_) throw ConfigError("loss requested before forward");
  return ops::softmax_cross_entropy<T>(logits(), labels, nullptr);
}

template <typename T>
T Network<T>::backward(std::span<const int> labels) {
  if (!has_forward_) throw ConfigError("backward requested before forward");
  std::vector<Tensor<T>> grads(graph_.nodes.size());
  const auto logits_id = static_cast<std::size_t>(graph_.logits_id);
  grads[logits_id] = Tensor<T>(acts_[logits_id].shape());
  const T loss_value = ops::softmax_cross_entropy<T>(acts_[logits_id], labels, &grads[logits_id]);

  auto grad_of = [&](int id) -> Tensor<T>& {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor<T>(acts_[static_cast<std::size_t>(id)].shape());
    return g;
  };

  for (std::size_t idx = logits_id + 1; idx-- > 0;) {
    const LayerNode& n = graph_.nodes[idx];
    if (grads[idx].empty() || n.kind == NodeKind::input) continue;
    const Tensor<T>& dy = grads[idx];
    const Slots& s = slots_[idx];
    auto in_act = [&](std::size_t i) -> const Tensor<T>& { return acts_[static_cast<std::size_t>(n.inputs[i])]; };
    switch (n.kind) {
      case NodeKind::stem_conv:
      case NodeKind::conv2d: {
        auto& p = store_.param(static_cast<std::size_t>(s.weight));
        Tensor<T>* dx = graph_.node(n.inputs[0]).kind == NodeKind::input ? nullptr : &grad_of(n.inputs[0]);
        ops::conv2d_backward(in_act(0), p.value, n.stride, dy, dx, &p.grad);
        break;
      }
      case NodeKind::depthwise_conv: {
        auto& p = store_.param(static_cast<std::size_t>(s.weight));
        ops::depthwise_conv_backward(in_act(0), p.value, n.stride, dy, &grad_of(n.inputs[0]), &p.grad);
        break;
      }
      case NodeKind::batch_norm: {
        auto& gamma = store_.param(static_cast<std::size_t>(s.gamma));
        auto& beta = store_.param(static_cast<std::size_t>(s.beta));
        ops::batch_norm_backward(dy, gamma.value, bn_caches_[idx], &grad_of(n.inputs[0]), &gamma.grad, &beta.grad);
        break;
      }
      case NodeKind::relu:
        ops::relu_backward(acts_[idx], dy, grad_of(n.inputs[0]));
        break;
      case NodeKind::combine: {
        std::vector<Tensor<T>*> dxs;
        for (int i : n.inputs) dxs.push_back(&grad_of(i));
        if (n.combiner == CombinerKind::concat)
          ops::concat_channels_backward<T>(dy, dxs);
        else
          ops::weighted_sum_backward<T>(dy, combine_weights_[idx], dxs);
        break;
      }
      case NodeKind::residual_add: {
        const std::vector<T> w = {T{1}, T{1}};
        std::vector<Tensor<T>*> dxs = {&grad_of(n.inputs[0]), &grad_of(n.inputs[1])};
        ops::weighted_sum_backward<T>(dy, w, dxs);
        break;
      }
      case NodeKind::global_avg_pool:
        ops::global_avg_pool_backward(dy, grad_of(n.inputs[0]));
        break;
      case NodeKind::dense: {
        auto& w = store_.param(static_cast<std::size_t>(s.weight));
        auto& b = store_.param(static_cast<std::size_t>(s.bias));
        ops::dense_backward(in_act(0), w.value, dy, &grad_of(n.inputs[0]), &w.grad, &b.grad);
        break;
      }
      default:
        break;
    }
    grads[idx] = Tensor<T>{};
  }
  return loss_value;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Network<float>;
template class Network<double>;

}  // namespace blocknas
