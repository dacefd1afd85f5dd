#pragma once

// Forward and backward kernels for the operator set the graph compiler
// emits. All activations are N x H x W x C. Backward functions accumulate
// into their output gradients (+=), so a tensor consumed by several nodes
// can collect its gradient from each of them; pass nullptr for gradients
// that are not needed.

#include <cstdint>
#include <span>
#include <vector>

#include "blocknas/random.hpp"
#include "blocknas/tensor.hpp"

namespace blocknas::ops {

struct SamePadding {
  int out = 0;
  int before = 0;
};

// Output extent ceil(in / stride); total padding split with the smaller
// half before.
SamePadding same_padding(int in, int kernel, int stride);

// x: N x H x W x Cin, w: KH x KW x Cin x Cout. Zero-padded cross-correlation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride);
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw);

// w: KH x KW x C, one filter per channel.
template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& x, const Tensor<T>& w, int stride);
template <typename T>
void depthwise_conv_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, const Tensor<T>& dy,
                             Tensor<T>* dx, Tensor<T>* dw);

template <typename T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> var;  // biased batch variance
  std::vector<T> inv_std;
  Tensor<T> xhat;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Batch statistics over (N, H, W) per channel. Throws ConfigError for N < 2.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           BatchNormCache<T>& cache, double eps = kBatchNormEpsilon);
template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const Tensor<T>& running_mean, const Tensor<T>& running_var,
                          double eps = kBatchNormEpsilon);
// running <- momentum * running + (1 - momentum) * batch, with the unbiased
// batch variance.
template <typename T>
void update_running_stats(const BatchNormCache<T>& cache, std::size_t count_per_channel, Tensor<T>& running_mean,
                          Tensor<T>& running_var, double momentum = kBatchNormMomentum);
template <typename T>
void batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                         Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// Uses the forward output; the subgradient at 0 is 0.
template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> inputs);
template <typename T>
void concat_channels_backward(const Tensor<T>& dy, std::span<Tensor<T>* const> dxs);

// sum_i weights[i] * inputs[i]; all inputs share one shape.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>* const> inputs, std::span<const T> weights);
template <typename T>
void weighted_sum_backward(const Tensor<T>& dy, std::span<const T> weights, std::span<Tensor<T>* const> dxs);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, Tensor<T>& dx);

// x: N x ... x Cin (flattened per row), w: Cin x Cout, b: Cout. Output N x 1 x 1 x Cout.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                    Tensor<T>* db);

// Row-wise softmax over the last dimension.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean cross-entropy over the batch via log-sum-exp; writes
// (softmax - onehot) / N into dlogits when given. Throws ConfigError for a
// label outside [0, classes).
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* dlogits);

// Uniform draw from the (count-1)-simplex: normalized unit exponentials.
std::vector<double> simplex_weights(std::size_t count, Random& rng);

}  // namespace blocknas::ops
