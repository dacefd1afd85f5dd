#pragma once

// Graph executor: owns the parameters of one ArchGraph and runs forward and
// backward passes over it.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "blocknas/archgraph.hpp"
#include "blocknas/ops.hpp"
#include "blocknas/random.hpp"
#include "blocknas/tensor.hpp"

namespace blocknas {

enum class Mode { train, eval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;
  bool decay = true;
};

// Non-trainable state such as BN running statistics.
template <typename T>
struct StateBuffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class ParamStore {
 public:
  std::size_t add_param(std::string name, Tensor<T> value, bool decay);
  std::size_t add_buffer(std::string name, Tensor<T> value);

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<StateBuffer<T>>& buffers() { return buffers_; }
  const std::vector<StateBuffer<T>>& buffers() const { return buffers_; }

  Parameter<T>& param(std::size_t i) { return params_[i]; }
  const Parameter<T>& param(std::size_t i) const { return params_[i]; }
  StateBuffer<T>& buffer(std::size_t i) { return buffers_[i]; }
  const StateBuffer<T>& buffer(std::size_t i) const { return buffers_[i]; }

  const Parameter<T>* find_param(const std::string& name) const;
  const StateBuffer<T>* find_buffer(const std::string& name) const;

  void zero_grad();
  // Element count over trainable parameters.
  std::uint64_t element_count() const;

 private:
  std::vector<Parameter<T>> params_;
  std::vector<StateBuffer<T>> buffers_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
};

template <typename T>
class Network {
 public:
  // He-normal conv/dense weights (variance 2/fan_in), gamma 1, beta 0,
  // bias 0, running mean 0 and variance 1; all drawn from `seed`.
  Network(ArchGraph graph, std::uint64_t seed);

  const ArchGraph& graph() const { return graph_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  // Runs every node and keeps the activations for backward. Train mode
  // uses batch statistics, updates BN running stats and draws add_stc
  // weights. Returns the softmax output. Throws NumericError on NaN/Inf.
  const Tensor<T>& forward(const Tensor<T>& input, Mode mode);

  // Mean cross-entropy of the last forward pass.
  T loss(std::span<const int> labels) const;

  // Backpropagates the mean cross-entropy of the last forward pass and
  // accumulates into the parameter gradients. Returns the loss.
  T backward(std::span<const int> labels);

  // Eval-mode pass that leaves the executor untouched.
  Tensor<T> predict(const Tensor<T>& input) const;

  const Tensor<T>& activation(int node_id) const { return acts_.at(static_cast<std::size_t>(node_id)); }
  const Tensor<T>& logits() const { return activation(graph_.logits_id); }

  // While frozen, add_stc nodes reuse the weights of their previous
  // train-mode pass, so repeated passes compute the same function.
  void set_stochastic_frozen(bool frozen) { stochastic_frozen_ = frozen; }
  const std::vector<T>& combine_weights(int node_id) const {
    return combine_weights_.at(static_cast<std::size_t>(node_id));
  }

 private:
  struct Slots {
    int weight = -1;
    int gamma = -1;
    int beta = -1;
    int bias = -1;
    int running_mean = -1;
    int running_var = -1;
  };

  Tensor<T> eval_node(const LayerNode& node, std::span<const Tensor<T>> acts) const;
  std::vector<T> equal_weights(std::size_t count) const;
  void check_input(const Tensor<T>& input) const;

  ArchGraph graph_;
  ParamStore<T> store_;
  std::vector<Slots> slots_;
  // Id of the last node reading each activation.
  std::vector<int> last_use_;
  std::vector<Tensor<T>> acts_;
  std::vector<ops::BatchNormCache<T>> bn_caches_;
  std::vector<std::vector<T>> combine_weights_;
  Random stochastic_rng_;
  bool stochastic_frozen_ = false;
  bool has_forward_ = false;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Network<float>;
extern template class Network<double>;

}  // namespace blocknas
