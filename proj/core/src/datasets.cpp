#include "blocknas/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "blocknas/error.hpp"
#include "blocknas/random.hpp"

namespace blocknas {

std::string_view to_string(SplitRole role) {
  switch (role) {
    case SplitRole::source: return "source";
    case SplitRole::train: return "train";
    case SplitRole::val: return "val";
    case SplitRole::test: return "test";
  }
  return "?";
}

LabeledImageSet::LabeledImageSet(Tensor<float> images, std::vector<int> labels, int num_classes, SplitRole role)
    : images_(std::move(images)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      role_(role),
      reads_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
  if (images_.rank() != 4) throw DataError("image tensor must be N x H x W x C, got " + format_extents(images_.shape()));
  if (images_.dim(0) != labels_.size())
    throw DataError("image count " + std::to_string(images_.dim(0)) + " differs from label count " +
                    std::to_string(labels_.size()));
  if (num_classes_ < 1) throw DataError("class count must be positive");
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (labels_[i] < 0 || labels_[i] >= num_classes_)
      throw DataError("label " + std::to_string(labels_[i]) + " at index " + std::to_string(i) + " outside [0, " +
                      std::to_string(num_classes_) + ")");
}

Tensor<float> LabeledImageSet::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = size() ? images_.size() / size() : 0;
  Tensor<float> out({indices.size(), height(), width(), channels()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("example index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images_.data() + indices[i] * per, per, out.data() + i * per);
  }
  if (reads_) *reads_ += indices.size();
  return out;
}

std::vector<int> LabeledImageSet::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels_.at(indices[i]);
  return out;
}

const Tensor<float>& LabeledImageSet::images() const {
  if (reads_) *reads_ += size();
  return images_;
}

LabeledImageSet LabeledImageSet::subset(std::span<const std::size_t> indices, SplitRole role) const {
  const std::size_t per = size() ? images_.size() / size() : 0;
  Tensor<float> imgs({indices.size(), height(), width(), channels()});
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("example index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images_.data() + indices[i] * per, per, imgs.data() + i * per);
    labels[i] = labels_[indices[i]];
  }
  return LabeledImageSet(std::move(imgs), std::move(labels), num_classes_, role);
}

LabeledImageSet LabeledImageSet::merge(const LabeledImageSet& a, const LabeledImageSet& b, SplitRole role) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
    throw DataError("cannot merge image sets with different geometry");
  std::vector<float> values(a.images_.values().begin(), a.images_.values().end());
  values.insert(values.end(), b.images_.values().begin(), b.images_.values().end());
  std::vector<int> labels = a.labels_;
  labels.insert(labels.end(), b.labels_.begin(), b.labels_.end());
  Tensor<float> imgs({a.size() + b.size(), a.height(), a.width(), a.channels()}, std::move(values));
  return LabeledImageSet(std::move(imgs), std::move(labels), std::max(a.num_classes_, b.num_classes_), role);
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

LabeledImageSet load_cifar10_batch(const std::string& path, std::size_t expected_records, SplitRole role) {
  const auto bytes = read_file(path);
  if (expected_records > 0 && bytes.size() != expected_records * kCifarRecordBytes)
    throw DataError(path + ": expected " + std::to_string(expected_records * kCifarRecordBytes) + " bytes, got " +
                    std::to_string(bytes.size()));
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw DataError(path + ": length " + std::to_string(bytes.size()) + " is not a multiple of the " +
                    std::to_string(kCifarRecordBytes) + "-byte record size");
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  Tensor<float> images({count, 32, 32, 3});
  std::vector<int> labels(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    if (bytes[off] > 9)
      throw DataError(path + ": label " + std::to_string(bytes[off]) + " at offset " + std::to_string(off) +
                      " exceeds 9");
    labels[r] = bytes[off];
    const unsigned char* px = bytes.data() + off + 1;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
          images.at(r, y, x, c) = static_cast<float>(px[c * 1024 + y * 32 + x]) / 255.0f;
  }
  return LabeledImageSet(std::move(images), std::move(labels), 10, role);
}

std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  LabeledImageSet train;
  for (int i = 1; i <= 5; ++i) {
    auto batch = load_cifar10_batch((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string(),
                                    kCifarRecordsPerBatch, SplitRole::train);
    train = train.empty() ? std::move(batch) : LabeledImageSet::merge(train, batch, SplitRole::train);
  }
  auto test = load_cifar10_batch((fs::path(dir) / "test_batch.bin").string(), kCifarRecordsPerBatch, SplitRole::test);
  return {std::move(train), std::move(test)};
}

LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path, int num_classes,
                         SplitRole role) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16 || big_endian_u32(img, 0) != 0x00000803)
    throw DataError(images_path + ": not an idx3 image file (magic 0x00000803)");
  if (lab.size() < 8 || big_endian_u32(lab, 0) != 0x00000801)
    throw DataError(labels_path + ": not an idx1 label file (magic 0x00000801)");
  const std::size_t count = big_endian_u32(img, 4);
  const std::size_t rows = big_endian_u32(img, 8);
  const std::size_t cols = big_endian_u32(img, 12);
  if (img.size() != 16 + count * rows * cols)
    throw DataError(images_path + ": expected " + std::to_string(16 + count * rows * cols) + " bytes, got " +
                    std::to_string(img.size()));
  if (big_endian_u32(lab, 4) != count || lab.size() != 8 + count)
    throw DataError(labels_path + ": label count does not match " + std::to_string(count) + " images");
  Tensor<float> images({count, rows, cols, 1});
  for (std::size_t i = 0; i < count * rows * cols; ++i) images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = lab[8 + i];
    if (labels[i] >= num_classes)
      throw DataError(labels_path + ": label " + std::to_string(labels[i]) + " at offset " + std::to_string(8 + i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
  }
  return LabeledImageSet(std::move(images), std::move(labels), num_classes, role);
}

std::pair<LabeledImageSet, LabeledImageSet> split_validation(const LabeledImageSet& train, std::size_t val_size,
                                                             std::uint64_t seed) {
  if (val_size == 0) throw ConfigError("validation split must hold out at least one example");
  if (val_size >= train.size())
    throw ConfigError("validation size " + std::to_string(val_size) + " must be smaller than the training set (" +
                      std::to_string(train.size()) + ")");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Random rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val_size));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(val_size), order.end());
  std::sort(val.begin(), val.end());
  std::sort(rest.begin(), rest.end());
  return {train.subset(rest, SplitRole::train), train.subset(val, SplitRole::val)};
}

DataSplits synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (spec.image_size < 2 || spec.channels < 1 || spec.samples_per_class < 3)
    throw ConfigError("synthetic dataset geometry too small");
  if (spec.val_fraction <= 0 || spec.test_fraction <= 0 || spec.val_fraction + spec.test_fraction >= 1)
    throw ConfigError("synthetic split fractions must be positive and sum below 1");
  if (spec.difficulty < 0) throw ConfigError("synthetic difficulty must be >= 0");

  const auto size = static_cast<std::size_t>(spec.image_size);
  const auto channels = static_cast<std::size_t>(spec.channels);
  const auto per_class = static_cast<std::size_t>(spec.samples_per_class);
  const std::size_t total = per_class * static_cast<std::size_t>(spec.classes);
  Tensor<float> images({total, size, size, channels});
  std::vector<int> labels(total);

  const double grating_amp = 0.25;
  const double tint_amp = 0.15 / (1.0 + spec.difficulty);
  const double noise_sd = 0.4 * spec.difficulty;
  const double freq = 2.0 * std::numbers::pi * 2.0 / static_cast<double>(size);
  for (int c = 0; c < spec.classes; ++c) {
    const double theta = std::numbers::pi * c / spec.classes;
    const double hue = 2.0 * std::numbers::pi * c / spec.classes;
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t idx = static_cast<std::size_t>(c) * per_class + s;
      Random rng(derive_seed(spec.seed, idx));
      labels[idx] = c;
      const double phase = 2.0 * std::numbers::pi * rng.uniform01();
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double g = std::sin(freq * (std::cos(theta) * x + std::sin(theta) * y) + phase);
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const double tint = std::cos(hue + 2.0 * std::numbers::pi * ch / 3.0);
            double v = 0.5 + grating_amp * g + tint_amp * tint + noise_sd * rng.normal();
            images.at(idx, y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
    }
  }
  LabeledImageSet all(std::move(images), std::move(labels), spec.classes, SplitRole::source);

  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(per_class * spec.test_fraction)));
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(per_class * spec.val_fraction)));
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  Random split_rng(derive_seed(spec.seed, 0x73706c6974));
  for (int c = 0; c < spec.classes; ++c) {
    std::vector<std::size_t> members(per_class);
    std::iota(members.begin(), members.end(), static_cast<std::size_t>(c) * per_class);
    split_rng.shuffle(members.begin(), members.end());
    for (std::size_t i = 0; i < per_class; ++i) {
      if (i < n_test)
        test_idx.push_back(members[i]);
      else if (i < n_test + n_val)
        val_idx.push_back(members[i]);
      else
        train_idx.push_back(members[i]);
    }
  }
  split_rng.shuffle(train_idx.begin(), train_idx.end());
  split_rng.shuffle(val_idx.begin(), val_idx.end());
  split_rng.shuffle(test_idx.begin(), test_idx.end());
  return {all.subset(train_idx, SplitRole::train), all.subset(val_idx, SplitRole::val),
          all.subset(test_idx, SplitRole::test)};
}

DatasetProfile default_profile(const std::string& name) {
  DatasetProfile p;
  p.name = name;
  if (name == "synthetic") {
    return p;
  }
  if (name == "cifar10" || name == "cifar100") {
    p.augment_crop = true;
    p.augment_flip = true;
    p.val_size = 5000;
    return p;
  }
  if (name == "svhn") {
    p.augment_crop = true;
    p.augment_flip = false;
    p.val_size = 5000;
    return p;
  }
  if (name == "fer2013" || name == "mnist") {
    p.augment_crop = true;
    p.augment_flip = name == "fer2013";
    p.val_size = 5000;
    return p;
  }
  throw ConfigError("unknown dataset profile '" + name + "'");
}

DataSplits load_profile(const DatasetProfile& profile) {
  namespace fs = std::filesystem;
  if (profile.name == "synthetic") return synth_dataset(profile.synth);
  if (profile.name == "cifar10") {
    auto [train, test] = load_cifar10(profile.path);
    auto [tr, val] = split_validation(train, profile.val_size, profile.split_seed);
    return {std::move(tr), std::move(val), std::move(test)};
  }
  if (profile.name == "mnist") {
    const fs::path dir(profile.path);
    auto train = load_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string(), 10,
                          SplitRole::source);
    auto test = load_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string(), 10,
                         SplitRole::test);
    auto [tr, val] = split_validation(train, profile.val_size, profile.split_seed);
    return {std::move(tr), std::move(val), std::move(test)};
  }
  if (profile.name == "cifar100")
    throw DataError(
        "cifar100 loader not provided (binary records: 1 coarse label byte, 1 fine label byte, 3072 planar RGB "
        "pixel bytes; files train.bin / test.bin)");
  if (profile.name == "svhn")
    throw DataError("svhn loader not provided (cropped-digit MATLAB files train_32x32.mat / test_32x32.mat, "
                    "32x32x3 images, label 10 denotes digit 0)");
  if (profile.name == "fer2013")
    throw DataError("fer2013 loader not provided (fer2013.csv: emotion label 0-6, 48x48 grayscale pixels as "
                    "space-separated integers, Usage column selects the split)");
  throw ConfigError("unknown dataset profile '" + profile.name + "'");
}

nlohmann::json profile_to_json(const DatasetProfile& p) {
  nlohmann::json j = {{"name", p.name},
                      {"path", p.path},
                      {"augment_crop", p.augment_crop},
                      {"augment_flip", p.augment_flip},
                      {"val_size", p.val_size},
                      {"split_seed", p.split_seed}};
  if (p.name == "synthetic")
    j["synthetic"] = {{"classes", p.synth.classes},
                      {"image_size", p.synth.image_size},
                      {"channels", p.synth.channels},
                      {"samples_per_class", p.synth.samples_per_class},
                      {"difficulty", p.synth.difficulty},
                      {"seed", p.synth.seed},
                      {"val_fraction", p.synth.val_fraction},
                      {"test_fraction", p.synth.test_fraction}};
  return j;
}

DatasetProfile profile_from_json(const nlohmann::json& j) {
  try {
    DatasetProfile p = default_profile(j.at("name").get<std::string>());
    p.path = j.value("path", p.path);
    p.augment_crop = j.value("augment_crop", p.augment_crop);
    p.augment_flip = j.value("augment_flip", p.augment_flip);
    p.val_size = j.value("val_size", p.val_size);
    p.split_seed = j.value("split_seed", p.split_seed);
    if (j.contains("synthetic")) {
      const auto& s = j.at("synthetic");
      p.synth.classes = s.value("classes", p.synth.classes);
      p.synth.image_size = s.value("image_size", p.synth.image_size);
      p.synth.channels = s.value("channels", p.synth.channels);
      p.synth.samples_per_class = s.value("samples_per_class", p.synth.samples_per_class);
      p.synth.difficulty = s.value("difficulty", p.synth.difficulty);
      p.synth.seed = s.value("seed", p.synth.seed);
      p.synth.val_fraction = s.value("val_fraction", p.synth.val_fraction);
      p.synth.test_fraction = s.value("test_fraction", p.synth.test_fraction);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset profile: ") + e.what());
  }
}

}  // namespace blocknas
