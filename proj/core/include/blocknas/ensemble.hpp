#pragma once

// Top-k ensembles (mean of member softmax outputs), accuracy reporting and
// building-block component histograms.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/blockspace.hpp"
#include "blocknas/search.hpp"
#include "blocknas/trainer.hpp"

namespace blocknas {

// A trained network with the input statistics it was trained with.
struct LoadedModel {
  std::string config;
  std::unique_ptr<Network<float>> net;
  DatasetStats stats;
};

// Rebuilds the graph and restores parameters and the stored input mean.
LoadedModel load_model(const std::string& config, const MacroConfig& macro, const std::string& checkpoint_path);

// Eval-mode probabilities with each row renormalized in double precision.
Tensor<double> model_predict(const LoadedModel& model, const LabeledImageSet& set);

// Elementwise mean of member probability tensors in member order. Throws
// ConfigError on an empty list and ShapeError when members disagree on
// example or class count.
Tensor<double> average_probabilities(std::span<const Tensor<double>> members);

// Evaluates members on up to `jobs` threads, then averages.
Tensor<double> ensemble_predict(std::span<const LoadedModel> members, const LabeledImageSet& set, int jobs = 1);

struct EvalResult {
  double accuracy = 0.0;
  double error_percent = 0.0;
  std::size_t count = 0;
};

// Top-1 accuracy of the argmax of each row. Throws DataError when empty.
EvalResult evaluate(const Tensor<double>& probabilities, std::span<const int> labels);

struct HistogramBucket {
  std::string component;  // "conv(3)" ... or a combiner name
  bool is_combiner = false;
  std::uint64_t count_all = 0;
  std::uint64_t count_top = 0;
  double expected_top = 0.0;  // count_all * |top| / |configs|
};

struct ComponentHistogram {
  std::vector<HistogramBucket> buckets;  // 9 ops, then 3 combiners
  std::size_t config_count = 0;
  std::size_t top_count = 0;

  const HistogramBucket& bucket(const std::string& component) const;
};

// Throws ConfigError for an empty config list or when `top` is not a
// sub-multiset of `configs`.
ComponentHistogram component_histogram(std::span<const BlockConfig> configs, std::span<const BlockConfig> top);

// component,count_all,count_top,expected_top
void write_histogram_csv(const std::string& path, const ComponentHistogram& hist);

struct EnsembleMember {
  int trial_index = 0;
  std::string config;
  std::string checkpoint;
  double val_acc = 0.0;
};

struct EnsembleSpec {
  std::uint64_t manifest_hash = 0;
  std::string aggregation = "mean_softmax";
  std::vector<EnsembleMember> members;
};

nlohmann::json ensemble_spec_to_json(const EnsembleSpec& spec);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j);

struct EnsembleReport {
  EnsembleSpec spec;
  std::optional<std::string> warning;
  EvalResult single;    // best member alone on the test split
  EvalResult ensemble;  // all members on the test split
};

// Selects the top-k trials of the run in `run_dir`, evaluates the best one
// and the ensemble on the test split, and writes <run_dir>/ensemble.json.
EnsembleReport run_ensemble(const std::string& run_dir, int top_k, int jobs = 1);

// Histogram of all trials vs the top-k ok trials, written to
// <run_dir>/histogram.csv.
ComponentHistogram run_analysis(const std::string& run_dir, std::optional<int> top_k = {});

}  // namespace blocknas
