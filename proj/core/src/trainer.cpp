#include "blocknas/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "blocknas/checkpoint.hpp"
#include "blocknas/error.hpp"

namespace blocknas {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (!(lr_initial > 0)) fail("lr_initial must be positive");
  if (lr_drop_every_epochs < 1) fail("lr_drop_every_epochs must be >= 1");
  if (!(lr_drop_factor > 0 && lr_drop_factor < 1)) fail("lr_drop_factor must lie in (0, 1)");
  if (momentum < 0 || momentum >= 1) fail("momentum must lie in [0, 1)");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (early_stop_patience_epochs < 1) fail("early_stop_patience_epochs must be >= 1");
  if (early_stop_patience_epochs > max_epochs) fail("early_stop_patience_epochs must not exceed max_epochs");
  if (crop_padding < 0) fail("crop_padding must be >= 0");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr_initial", c.lr_initial},
          {"lr_drop_every_epochs", c.lr_drop_every_epochs},
          {"lr_drop_factor", c.lr_drop_factor},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"max_epochs", c.max_epochs},
          {"early_stop_patience_epochs", c.early_stop_patience_epochs},
          {"augment_crop", c.augment_crop},
          {"augment_flip", c.augment_flip},
          {"crop_padding", c.crop_padding},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_initial = j.value("lr_initial", c.lr_initial);
    c.lr_drop_every_epochs = j.value("lr_drop_every_epochs", c.lr_drop_every_epochs);
    c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience_epochs = j.value("early_stop_patience_epochs", c.early_stop_patience_epochs);
    c.augment_crop = j.value("augment_crop", c.augment_crop);
    c.augment_flip = j.value("augment_flip", c.augment_flip);
    c.crop_padding = j.value("crop_padding", c.crop_padding);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  const int drops = std::max(epoch, 0) / cfg.lr_drop_every_epochs;
  return cfg.lr_initial * std::pow(cfg.lr_drop_factor, drops);
}

template <typename T>
void sgd_momentum_step(ParamStore<T>& store, double lr, const TrainConfig& cfg) {
  const T mu = static_cast<T>(cfg.momentum);
  const T eta = static_cast<T>(lr);
  for (auto& p : store.params()) {
    const T decay = p.decay ? static_cast<T>(cfg.weight_decay) : T{0};
    T* w = p.value.data();
    T* v = p.momentum.data();
    const T* g = p.grad.data();
    bool finite = true;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      v[i] = mu * v[i] + g[i] + decay * w[i];
      w[i] -= eta * v[i];
      finite = finite && std::isfinite(w[i]);
    }
    if (!finite) throw NumericError("non-finite update of parameter " + p.name);
  }
}

template void sgd_momentum_step(ParamStore<float>&, double, const TrainConfig&);
template void sgd_momentum_step(ParamStore<double>&, double, const TrainConfig&);

DatasetStats compute_dataset_stats(const LabeledImageSet& train) {
  if (train.empty()) throw DataError("cannot compute statistics of an empty training split");
  const Tensor<float>& images = train.images();
  const std::size_t per = images.size() / train.size();
  std::vector<double> acc(per, 0.0);
  for (std::size_t n = 0; n < train.size(); ++n)
    for (std::size_t i = 0; i < per; ++i) acc[i] += images[n * per + i];
  Tensor<float> mean({train.height(), train.width(), train.channels()});
  for (std::size_t i = 0; i < per; ++i) mean[i] = static_cast<float>(acc[i] / static_cast<double>(train.size()));
  return {std::move(mean)};
}

void subtract_mean(Tensor<float>& batch, const DatasetStats& stats) {
  const std::size_t per = stats.mean_image.size();
  if (batch.rank() != 4 || batch.size() != batch.dim(0) * per ||
      Extents(batch.shape().begin() + 1, batch.shape().end()) != stats.mean_image.shape())
    throw ShapeError("batch " + format_extents(batch.shape()) + " does not match dataset statistics " +
                     format_extents(stats.mean_image.shape()));
  for (std::size_t n = 0; n < batch.dim(0); ++n)
    for (std::size_t i = 0; i < per; ++i) batch[n * per + i] -= stats.mean_image[i];
}

void flip_horizontal(Tensor<float>& batch, std::size_t index) {
  const std::size_t h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t k = 0; k < c; ++k) std::swap(batch.at(index, y, x, k), batch.at(index, y, w - 1 - x, k));
}

void crop_shifted(Tensor<float>& batch, std::size_t index, int padding, int dy, int dx) {
  const auto h = static_cast<long>(batch.dim(1)), w = static_cast<long>(batch.dim(2));
  const auto c = batch.dim(3);
  std::vector<float> src(batch.data() + index * static_cast<std::size_t>(h * w) * c,
                         batch.data() + (index + 1) * static_cast<std::size_t>(h * w) * c);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const long sy = y + dy - padding, sx = x + dx - padding;
      const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
      for (std::size_t k = 0; k < c; ++k)
        batch.at(index, static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) =
            inside ? src[(static_cast<std::size_t>(sy * w + sx)) * c + k] : 0.0f;
    }
}

void preprocess_batch(Tensor<float>& batch, const DatasetStats& stats, const TrainConfig& cfg, Mode mode,
                      Random& rng) {
  subtract_mean(batch, stats);
  if (mode != Mode::train) return;
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    if (cfg.augment_crop && cfg.crop_padding > 0) {
      const auto span = static_cast<std::uint64_t>(2 * cfg.crop_padding + 1);
      const int dy = static_cast<int>(rng.uniform_index(span));
      const int dx = static_cast<int>(rng.uniform_index(span));
      crop_shifted(batch, n, cfg.crop_padding, dy, dx);
    }
    if (cfg.augment_flip && rng.bernoulli(0.5)) flip_horizontal(batch, n);
  }
}

Tensor<float> predict_set(const Network<float>& net, const LabeledImageSet& set, const DatasetStats& stats,
                          std::size_t batch_size) {
  if (set.empty()) throw DataError("cannot predict on an empty split");
  const auto classes = static_cast<std::size_t>(net.graph().macro.num_classes);
  Tensor<float> out({set.size(), classes});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> batch = set.gather(idx);
    subtract_mean(batch, stats);
    const Tensor<float> probs = net.predict(batch);
    std::copy_n(probs.data(), probs.size(), out.data() + start * classes);
  }
  return out;
}

double top1_accuracy(const Tensor<float>& probabilities, std::span<const int> labels) {
  if (labels.empty()) throw DataError("accuracy of an empty split");
  const std::size_t c = probabilities.shape().back();
  if (probabilities.size() != labels.size() * c) throw ShapeError("probability rows do not match label count");
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = probabilities.data() + r * c;
    const auto pred = static_cast<int>(std::max_element(row, row + c) - row);
    correct += pred == labels[r] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

bool EarlyStopping::update(int epoch, double score) {
  improved_ = score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch;
    return false;
  }
  return epoch - best_epoch_ >= patience_;
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::patience: return "patience";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::diverged: return "diverged";
  }
  return "?";
}

StopReason parse_stop_reason(std::string_view text) {
  if (text == "patience") return StopReason::patience;
  if (text == "max_epochs") return StopReason::max_epochs;
  if (text == "diverged") return StopReason::diverged;
  throw ParseError("unknown stop reason '" + std::string(text) + "'");
}

namespace {

struct Snapshot {
  std::vector<Tensor<float>> params;
  std::vector<Tensor<float>> buffers;
};

Snapshot take_snapshot(const Network<float>& net) {
  Snapshot s;
  for (const auto& p : net.store().params()) s.params.push_back(p.value);
  for (const auto& b : net.store().buffers()) s.buffers.push_back(b.value);
  return s;
}

void apply_snapshot(Network<float>& net, const Snapshot& s) {
  for (std::size_t i = 0; i < s.params.size(); ++i) net.store().param(i).value = s.params[i];
  for (std::size_t i = 0; i < s.buffers.size(); ++i) net.store().buffer(i).value = s.buffers[i];
}

}  // namespace

TrainResult train_model(Network<float>& net, const DataSplits& data, const TrainConfig& cfg,
                        const TrainOptions& options) {
  cfg.validate();
  if (data.train.size() < 2) throw DataError("training split needs at least 2 examples");
  if (data.val.empty()) throw DataError("validation split is empty");
  const auto start_time = std::chrono::steady_clock::now();

  const DatasetStats stats = compute_dataset_stats(data.train);
  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    metrics.open(options.metrics_path, std::ios::trunc);
    if (!metrics) throw DataError("cannot write metrics file " + options.metrics_path);
  }

  TrainResult result;
  EarlyStopping stopper(cfg.early_stop_patience_epochs);
  Snapshot best = take_snapshot(net);
  Random rng(derive_seed(cfg.seed, 0x747261696e));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  try {
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      const double lr = lr_at(epoch, cfg);
      rng.shuffle(order.begin(), order.end());
      double loss_sum = 0.0;
      std::size_t correct = 0, seen = 0;
      for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        if (end - start < 2) break;  // BN needs two examples
        const std::span<const std::size_t> idx(order.data() + start, end - start);
        Tensor<float> batch = data.train.gather(idx);
        const std::vector<int> labels = data.train.gather_labels(idx);
        preprocess_batch(batch, stats, cfg, Mode::train, rng);
        const Tensor<float>& probs = net.forward(batch, Mode::train);
        const double acc = top1_accuracy(probs, labels);
        net.store().zero_grad();
        const float loss = net.backward(labels);
        if (!std::isfinite(loss)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        sgd_momentum_step(net.store(), lr, cfg);
        loss_sum += static_cast<double>(loss) * static_cast<double>(labels.size());
        correct += static_cast<std::size_t>(std::lround(acc * static_cast<double>(labels.size())));
        seen += labels.size();
      }
      EpochMetrics m;
      m.epoch = epoch;
      m.lr = lr;
      m.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
      m.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
      m.val_acc = top1_accuracy(predict_set(net, data.val, stats), data.val.labels());
      result.history.push_back(m);
      if (metrics.is_open()) {
        metrics << nlohmann::json{{"epoch", m.epoch},
                                  {"lr", m.lr},
                                  {"train_loss", m.train_loss},
                                  {"train_acc", m.train_acc},
                                  {"val_acc", m.val_acc}}
                       .dump()
                << '\n';
        metrics.flush();
      }
      if (options.on_epoch) options.on_epoch(m);
      const bool stop = stopper.update(epoch, m.val_acc);
      if (stopper.improved()) best = take_snapshot(net);
      if (stop) {
        result.stop_reason = StopReason::patience;
        break;
      }
    }
    if (result.stop_reason != StopReason::patience) result.stop_reason = StopReason::max_epochs;
    result.best_val_acc = stopper.best_score();
    result.best_epoch = stopper.best_epoch();
    apply_snapshot(net, best);
    if (!options.checkpoint_path.empty()) {
      std::vector<NamedTensor> aux;
      aux.push_back({"input_mean", TensorRole::auxiliary, stats.mean_image.cast<double>()});
      write_checkpoint(options.checkpoint_path, make_checkpoint(net, std::move(aux)));
      result.checkpoint_path = options.checkpoint_path;
    }
  } catch (const NumericError& e) {
    result.stop_reason = StopReason::diverged;
    result.failure = e.what();
    result.best_val_acc = 0.0;
    result.best_epoch = -1;
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

}  // namespace blocknas
