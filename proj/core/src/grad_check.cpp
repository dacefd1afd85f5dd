#include "blocknas/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

namespace blocknas {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

// Sign of every ReLU input of the last forward pass.
std::vector<bool> relu_pattern(const Network<double>& net) {
  std::vector<bool> signs;
  for (const auto& node : net.graph().nodes) {
    if (node.kind != NodeKind::relu) continue;
    for (double v : net.activation(node.inputs.front()).values()) signs.push_back(v > 0.0);
  }
  return signs;
}

}  // namespace

GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input, std::span<const int> labels,
                           const GradCheckOptions& options) {
  net.set_stochastic_frozen(false);
  net.forward(input, Mode::train);
  net.set_stochastic_frozen(true);
  const std::vector<bool> base = relu_pattern(net);
  net.store().zero_grad();
  net.backward(labels);

  // Loss at the current parameters, and whether the ReLU pattern held.
  auto probe = [&]() {
    net.forward(input, Mode::train);
    return std::pair{static_cast<double>(net.loss(labels)), relu_pattern(net) == base};
  };

  GradCheckReport report;
  Random pick(options.seed);
  for (auto& p : net.store().params()) {
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      pick.shuffle(coords.begin(), coords.end());
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double original = p.value[i];
      double step = options.step;
      std::optional<double> numeric;
      for (int attempt = 0; attempt <= options.kink_retries && !numeric; ++attempt, step /= 10.0) {
        auto at = [&](double offset) {
          p.value[i] = original + offset;
          return probe();
        };
        const auto [up, up_smooth] = at(step);
        const auto [down, down_smooth] = at(-step);
        if (!up_smooth || !down_smooth) continue;
        if (!options.fourth_order) {
          numeric = (up - down) / (2.0 * step);
          continue;
        }
        const auto [up2, up2_smooth] = at(2.0 * step);
        const auto [down2, down2_smooth] = at(-2.0 * step);
        if (up2_smooth && down2_smooth) numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * step);
      }
      p.value[i] = original;
      if (!numeric) {
        ++report.kinks_skipped;
        continue;
      }
      const double analytic = p.grad[i];
      const double err = relative_error(analytic, *numeric, options.denominator_floor);
      ++report.coords_checked;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = err;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = *numeric;
      }
    }
  }
  net.set_stochastic_frozen(false);
  return report;
}

GradCheckReport grad_check(const ArchGraph& graph, const Tensor<double>& input, std::span<const int> labels,
                           const GradCheckOptions& options) {
  Network<double> net(graph, options.seed);
  return grad_check(net, input, labels, options);
}

}  // namespace blocknas
