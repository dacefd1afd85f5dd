#pragma once

// Image-classification datasets: CIFAR-10 binary batches, idx files and a
// deterministic synthetic generator, plus seeded validation splits.

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/tensor.hpp"

namespace blocknas {

enum class SplitRole { source, train, val, test };

std::string_view to_string(SplitRole role);

// Immutable N x H x W x C images in [0, 1] with integer labels. Every
// pixel read goes through gather()/images() and is tallied in a counter
// shared by copies of the set, so callers can prove a split was never
// touched.
class LabeledImageSet {
 public:
  LabeledImageSet() = default;
  // Throws DataError when labels are out of range or counts disagree.
  LabeledImageSet(Tensor<float> images, std::vector<int> labels, int num_classes, SplitRole role);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t height() const { return images_.rank() == 4 ? images_.dim(1) : 0; }
  std::size_t width() const { return images_.rank() == 4 ? images_.dim(2) : 0; }
  std::size_t channels() const { return images_.rank() == 4 ? images_.dim(3) : 0; }
  int num_classes() const { return num_classes_; }
  SplitRole role() const { return role_; }
  const std::vector<int>& labels() const { return labels_; }

  Tensor<float> gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  // Whole image tensor; counts every example as read.
  const Tensor<float>& images() const;

  // Examples read so far through this set or any copy of it.
  std::uint64_t read_count() const { return reads_ ? reads_->load() : 0; }

  // New set (with its own counter) holding the listed examples.
  LabeledImageSet subset(std::span<const std::size_t> indices, SplitRole role) const;
  // Concatenation of two sets with matching geometry; not counted as reads.
  static LabeledImageSet merge(const LabeledImageSet& a, const LabeledImageSet& b, SplitRole role);

 private:
  Tensor<float> images_;
  std::vector<int> labels_;
  int num_classes_ = 0;
  SplitRole role_ = SplitRole::source;
  std::shared_ptr<std::atomic<std::uint64_t>> reads_;
};

struct DataSplits {
  LabeledImageSet train;
  LabeledImageSet val;
  LabeledImageSet test;
};

inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;
inline constexpr std::size_t kCifarRecordsPerBatch = 10000;

// One binary batch: records of 1 label byte + 3072 channel-planar pixel
// bytes (R, G, B planes, each row-major 32x32). `expected_records` 0
// accepts any whole number of records. Throws DataError naming the file
// and the expected vs actual byte length, or the offset of a bad label.
LabeledImageSet load_cifar10_batch(const std::string& path, std::size_t expected_records = 0,
                                   SplitRole role = SplitRole::source);

// data_batch_1..5.bin and test_batch.bin under `dir`.
std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::string& dir);

// idx3-ubyte images (magic 0x00000803) and idx1-ubyte labels (0x00000801),
// big-endian dimensions.
LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path, int num_classes,
                         SplitRole role);

// Seeded shuffle, then the first val_size examples become validation.
// Throws ConfigError when val_size is 0 or not smaller than the set.
std::pair<LabeledImageSet, LabeledImageSet> split_validation(const LabeledImageSet& train, std::size_t val_size,
                                                             std::uint64_t seed);

struct SynthSpec {
  int classes = 4;
  int image_size = 16;
  int channels = 3;
  int samples_per_class = 100;
  // 0 is noise-free; larger values add pixel noise and weaken the
  // class-keyed color tint.
  double difficulty = 0.1;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  double test_fraction = 0.2;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

// Class-keyed oriented gratings with random phase plus a class-keyed color
// tint and seeded Gaussian noise. Splits are balanced per class.
DataSplits synth_dataset(const SynthSpec& spec);

// How a run obtains its data. Names: synthetic, cifar10, mnist (idx), and
// the cifar100 / svhn / fer2013 profiles whose loaders are not provided.
struct DatasetProfile {
  std::string name = "synthetic";
  std::string path;
  bool augment_crop = false;
  bool augment_flip = false;
  std::size_t val_size = 0;
  std::uint64_t split_seed = 0;
  SynthSpec synth;

  friend bool operator==(const DatasetProfile&, const DatasetProfile&) = default;
};

// Defaults per name: CIFAR-style profiles crop and flip with 5000
// validation examples, SVHN does not flip. Throws ConfigError on an
// unknown name.
DatasetProfile default_profile(const std::string& name);

// Throws DataError for profiles without a loader or unreadable files.
DataSplits load_profile(const DatasetProfile& profile);

nlohmann::json profile_to_json(const DatasetProfile& profile);
DatasetProfile profile_from_json(const nlohmann::json& j);

}  // namespace blocknas
