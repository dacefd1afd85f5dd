#pragma once

// Momentum-SGD training of one network with a step learning-rate schedule,
// per-pixel mean subtraction, crop/flip augmentation and early stopping on
// validation accuracy.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/datasets.hpp"
#include "blocknas/network.hpp"

namespace blocknas {

struct TrainConfig {
  int batch_size = 128;
  double lr_initial = 0.1;
  int lr_drop_every_epochs = 25;
  double lr_drop_factor = 0.5;
  double momentum = 0.9;
  double weight_decay = 0.001;
  int max_epochs = 500;
  int early_stop_patience_epochs = 50;
  bool augment_crop = true;
  bool augment_flip = true;
  int crop_padding = 4;
  std::uint64_t seed = 0;

  // Throws ConfigError on any invariant violation.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// lr_initial * lr_drop_factor^floor(epoch / lr_drop_every_epochs).
double lr_at(int epoch, const TrainConfig& cfg);

// v <- momentum * v + g + decay * w ; w <- w - lr * v, with decay applied to
// parameters flagged for it (everything except the dense bias). Throws
// NumericError if an updated value is not finite.
template <typename T>
void sgd_momentum_step(ParamStore<T>& store, double lr, const TrainConfig& cfg);

struct DatasetStats {
  // H x W x C mean over the training split.
  Tensor<float> mean_image;
};

DatasetStats compute_dataset_stats(const LabeledImageSet& train);

void subtract_mean(Tensor<float>& batch, const DatasetStats& stats);
// Mirrors image `index` of an N x H x W x C batch left to right.
void flip_horizontal(Tensor<float>& batch, std::size_t index);
// Zero-pads image `index` by `padding` and crops back at offset
// (dy, dx) in [0, 2 * padding].
void crop_shifted(Tensor<float>& batch, std::size_t index, int padding, int dy, int dx);

// Mean subtraction always; in train mode random crops and flips (p = 0.5)
// when enabled in `cfg`.
void preprocess_batch(Tensor<float>& batch, const DatasetStats& stats, const TrainConfig& cfg, Mode mode,
                      Random& rng);

// Eval-mode class probabilities for every example of `set`.
Tensor<float> predict_set(const Network<float>& net, const LabeledImageSet& set, const DatasetStats& stats,
                          std::size_t batch_size = 256);

// Fraction of rows whose argmax equals the label.
double top1_accuracy(const Tensor<float>& probabilities, std::span<const int> labels);

// Stops once `patience` epochs pass without a strictly better score.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Records the score of `epoch`; returns true when training should stop.
  bool update(int epoch, double score);

  bool improved() const { return improved_; }
  double best_score() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double best_ = -1.0;
  int best_epoch_ = -1;
  bool improved_ = false;
};

enum class StopReason { patience, max_epochs, diverged };
std::string_view to_string(StopReason reason);
StopReason parse_stop_reason(std::string_view text);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double best_val_acc = 0.0;
  int best_epoch = -1;
  StopReason stop_reason = StopReason::max_epochs;
  std::string failure;
  double wall_seconds = 0.0;
  std::string checkpoint_path;

  bool ok() const { return stop_reason != StopReason::diverged; }
};

struct TrainOptions {
  // Written at the end with the best-validation parameters; empty skips.
  std::string checkpoint_path;
  // One JSON object per epoch; empty skips.
  std::string metrics_path;
  std::function<void(const EpochMetrics&)> on_epoch;
};

// Trains on data.train, selects on data.val and never reads data.test.
// The network ends holding its best-validation parameters. A non-finite
// loss or update ends the run with StopReason::diverged and a validation
// accuracy of 0 instead of throwing.
TrainResult train_model(Network<float>& net, const DataSplits& data, const TrainConfig& cfg,
                        const TrainOptions& options = {});

}  // namespace blocknas
