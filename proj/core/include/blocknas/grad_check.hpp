#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "blocknas/archgraph.hpp"
#include "blocknas/network.hpp"

namespace blocknas {

struct GradCheckOptions {
  double step = 1e-3;
  // Five-point central stencil (error O(h^4)); false uses the two-point
  // (f(x+h) - f(x-h)) / 2h.
  bool fourth_order = true;
  // Coordinates probed per parameter tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 0;
  // |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-7;
  // When a probe flips the sign of any ReLU input the difference quotient
  // straddles a kink; the step is divided by 10 up to this many times, then
  // the coordinate is skipped.
  int kink_retries = 3;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
};

double relative_error(double analytic, double numeric, double floor);

// Compares the backpropagated gradient of the mean cross-entropy with
// central finite differences for the parameters of `net`. Runs in train
// mode with add_stc weights frozen after the first pass.
GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input, std::span<const int> labels,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const ArchGraph& graph, const Tensor<double>& input, std::span<const int> labels,
                           const GradCheckOptions& options = {});

}  // namespace blocknas
