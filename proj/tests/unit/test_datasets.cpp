#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "blocknas/datasets.hpp"
#include "blocknas/error.hpp"
#include "oracles.hpp"

using namespace blocknas;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("blocknas_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> cifar_record(unsigned char label, unsigned char fill) {
  std::vector<unsigned char> r(kCifarRecordBytes, fill);
  r[0] = label;
  return r;
}

void put_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<unsigned char>(x >> s));
}

LabeledImageSet counting_set(std::size_t n) {
  std::vector<int> labels(n);
  Tensor<float> images({n, 1, 1, 1});
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 10);
    images[i] = static_cast<float>(i);
  }
  return LabeledImageSet(std::move(images), std::move(labels), 10, SplitRole::source);
}

}  // namespace

TEST(ImageSet, ValidatesLabelsAndCounts) {
  EXPECT_THROW(LabeledImageSet(Tensor<float>({2, 1, 1, 1}), {0, 3}, 3, SplitRole::train), DataError);
  EXPECT_THROW(LabeledImageSet(Tensor<float>({2, 1, 1, 1}), {0}, 3, SplitRole::train), DataError);
  EXPECT_THROW(LabeledImageSet(Tensor<float>({2, 1, 1, 1}), {0, -1}, 3, SplitRole::train), DataError);
}

TEST(ImageSet, ReadCounterSharedAcrossCopies) {
  const LabeledImageSet s = counting_set(10);
  const LabeledImageSet copy = s;
  EXPECT_EQ(s.read_count(), 0u);
  const std::size_t idx[] = {1, 2, 3};
  copy.gather(idx);
  EXPECT_EQ(s.read_count(), 3u);
  s.images();
  EXPECT_EQ(copy.read_count(), 13u);
  const LabeledImageSet sub = s.subset(idx, SplitRole::test);
  EXPECT_EQ(sub.read_count(), 0u);
  EXPECT_EQ(s.read_count(), 13u);
}

TEST(Cifar, SingleHandCraftedRecord) {
  const fs::path dir = temp_dir("one");
  write_bytes(dir / "one.bin", cifar_record(3, 255));
  const LabeledImageSet s = load_cifar10_batch((dir / "one.bin").string(), 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.labels()[0], 3);
  EXPECT_EQ(s.height(), 32u);
  EXPECT_EQ(s.channels(), 3u);
  for (float v : s.images().values()) EXPECT_EQ(v, 1.0f);
}

TEST(Cifar, ChannelPlanarLayout) {
  const fs::path dir = temp_dir("planar");
  std::vector<unsigned char> r(kCifarRecordBytes, 0);
  r[0] = 1;
  r[1 + 0 * 1024 + 5] = 51;    // R at row 0, col 5
  r[1 + 1 * 1024 + 32] = 102;  // G at row 1, col 0
  r[1 + 2 * 1024 + 1023] = 255;
  write_bytes(dir / "p.bin", r);
  const LabeledImageSet s = load_cifar10_batch((dir / "p.bin").string());
  const auto& im = s.images();
  EXPECT_FLOAT_EQ(im.at(0, 0, 5, 0), 0.2f);
  EXPECT_FLOAT_EQ(im.at(0, 1, 0, 1), 0.4f);
  EXPECT_FLOAT_EQ(im.at(0, 31, 31, 2), 1.0f);
  EXPECT_FLOAT_EQ(im.at(0, 0, 5, 1), 0.0f);
}

TEST(Cifar, TruncatedFileNamesLengths) {
  const fs::path dir = temp_dir("trunc");
  auto bytes = cifar_record(1, 7);
  const auto second = cifar_record(2, 7);
  bytes.insert(bytes.end(), second.begin(), second.begin() + 100);
  write_bytes(dir / "t.bin", bytes);
  try {
    load_cifar10_batch((dir / "t.bin").string(), 2);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("t.bin"), std::string::npos);
    EXPECT_NE(msg.find("expected 6146 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 3173"), std::string::npos) << msg;
  }
  EXPECT_THROW(load_cifar10_batch((dir / "t.bin").string()), DataError);
}

TEST(Cifar, BadLabelNamesOffset) {
  const fs::path dir = temp_dir("label");
  auto bytes = cifar_record(1, 0);
  const auto bad = cifar_record(10, 0);
  bytes.insert(bytes.end(), bad.begin(), bad.end());
  write_bytes(dir / "l.bin", bytes);
  try {
    load_cifar10_batch((dir / "l.bin").string());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 3073"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_cifar10((dir / "missing").string()), DataError);
}

TEST(Idx, LoadsHandCraftedFiles) {
  const fs::path dir = temp_dir("idx");
  std::vector<unsigned char> img, lab;
  put_be32(img, 0x803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 3);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<unsigned char>(i * 20));
  put_be32(lab, 0x801);
  put_be32(lab, 2);
  lab.push_back(7);
  lab.push_back(2);
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
  const LabeledImageSet s = load_idx((dir / "img").string(), (dir / "lab").string(), 10, SplitRole::train);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.height(), 2u);
  EXPECT_EQ(s.width(), 3u);
  EXPECT_EQ(s.channels(), 1u);
  EXPECT_EQ(s.labels(), (std::vector<int>{7, 2}));
  EXPECT_FLOAT_EQ(s.images().at(1, 1, 2, 0), 220.0f / 255.0f);

  img[3] = 0x04;
  write_bytes(dir / "bad", img);
  EXPECT_THROW(load_idx((dir / "bad").string(), (dir / "lab").string(), 10, SplitRole::train), DataError);
  lab.pop_back();
  write_bytes(dir / "short", lab);
  EXPECT_THROW(load_idx((dir / "img").string(), (dir / "short").string(), 10, SplitRole::train), DataError);
}

TEST(Split, PartitionIsDisjointAndDeterministic) {
  const LabeledImageSet all = counting_set(50000);
  auto [train, val] = split_validation(all, 5000, 7);
  EXPECT_EQ(train.size(), 45000u);
  EXPECT_EQ(val.size(), 5000u);
  std::vector<float> ids;
  for (float v : train.images().values()) ids.push_back(v);
  for (float v : val.images().values()) ids.push_back(v);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) ASSERT_EQ(ids[i], static_cast<float>(i));
  auto [train2, val2] = split_validation(all, 5000, 7);
  EXPECT_EQ(val2.images(), val.images());
  auto [train3, val3] = split_validation(all, 5000, 8);
  EXPECT_NE(val3.images(), val.images());
  EXPECT_THROW(split_validation(all, 0, 1), ConfigError);
  EXPECT_THROW(split_validation(all, 50000, 1), ConfigError);
}

TEST(Synthetic, CountsBalanceAndRange) {
  SynthSpec spec;
  spec.classes = 4;
  spec.samples_per_class = 100;
  const DataSplits d = synth_dataset(spec);
  EXPECT_EQ(d.train.size() + d.val.size() + d.test.size(), 400u);
  std::vector<int> per_class(4, 0);
  for (const auto* s : {&d.train, &d.val, &d.test}) {
    for (int l : s->labels()) ++per_class[static_cast<std::size_t>(l)];
    for (float v : s->images().values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  for (int c : per_class) EXPECT_EQ(c, 100);
  std::vector<int> val_per_class(4, 0);
  for (int l : d.val.labels()) ++val_per_class[static_cast<std::size_t>(l)];
  for (int c : val_per_class) EXPECT_EQ(c, 20);
  EXPECT_EQ(d.test.role(), SplitRole::test);
}

TEST(Synthetic, BitwiseDeterministic) {
  SynthSpec spec;
  spec.seed = 5;
  const DataSplits a = synth_dataset(spec), b = synth_dataset(spec);
  EXPECT_EQ(a.train.images(), b.train.images());
  EXPECT_EQ(a.test.labels(), b.test.labels());
  spec.seed = 6;
  EXPECT_NE(synth_dataset(spec).train.images(), a.train.images());
}

TEST(Synthetic, NoiseFreeTwoClassIsLinearlySeparable) {
  SynthSpec spec;
  spec.classes = 2;
  spec.difficulty = 0.0;
  spec.samples_per_class = 100;
  const DataSplits d = synth_dataset(spec);
  EXPECT_EQ(oracle::logistic_regression_accuracy(d.train, d.val, 200, 0.05), 1.0);
}

TEST(Profiles, DefaultsAndStubs) {
  EXPECT_FALSE(default_profile("svhn").augment_flip);
  EXPECT_TRUE(default_profile("svhn").augment_crop);
  EXPECT_TRUE(default_profile("cifar10").augment_flip);
  EXPECT_EQ(default_profile("cifar100").val_size, 5000u);
  EXPECT_THROW(default_profile("imagenet"), ConfigError);
  for (const char* name : {"cifar100", "svhn", "fer2013"}) EXPECT_THROW(load_profile(default_profile(name)), DataError);
  DatasetProfile p = default_profile("synthetic");
  p.synth.classes = 3;
  p.synth.difficulty = 0.25;
  EXPECT_EQ(profile_from_json(profile_to_json(p)), p);
}
