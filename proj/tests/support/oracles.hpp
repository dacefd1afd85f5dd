#pragma once

// Reference implementations the tests compare the library against. None of
// them call into the code under test beyond its data types.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "blocknas/archgraph.hpp"
#include "blocknas/blockspace.hpp"
#include "blocknas/datasets.hpp"
#include "blocknas/random.hpp"
#include "blocknas/tensor.hpp"

namespace oracle {

using blocknas::Tensor;

// Direct nested-loop "same" cross-correlation; x NHWC, w KH x KW x Cin x Cout.
Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, int stride);
// w: KH x KW x C.
Tensor<double> depthwise(const Tensor<double>& x, const Tensor<double>& w, int stride);

// Central-difference gradient of f with respect to every entry of x.
std::vector<double> numeric_gradient(const std::function<double()>& f, std::vector<double>& x, double h);

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                          double floor = 1e-8);

// Nodes the construction rules produce for (block, macro), counted by
// walking stem, stages, blocks and head.
std::size_t node_count(const blocknas::BlockConfig& block, const blocknas::MacroConfig& macro);

// Closed-form trainable parameter count from the layer formulas.
std::uint64_t param_count(const blocknas::BlockConfig& block, const blocknas::MacroConfig& macro);

// k-sigma half width of a binomial proportion.
double binomial_halfwidth(double p, std::size_t n, double sigmas);

// Multinomial logistic regression trained by full-batch gradient descent;
// returns accuracy on `eval`.
double logistic_regression_accuracy(const blocknas::LabeledImageSet& train, const blocknas::LabeledImageSet& eval,
                                    int iterations, double lr);

Tensor<double> random_tensor(const blocknas::Extents& shape, blocknas::Random& rng, double scale = 1.0);

}  // namespace oracle
