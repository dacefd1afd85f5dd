#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "blocknas/ensemble.hpp"
#include "blocknas/error.hpp"
#include "blocknas/manifest.hpp"
#include "oracles.hpp"

using namespace blocknas;
namespace fs = std::filesystem;

namespace {

Tensor<double> random_probabilities(std::size_t n, std::size_t classes, Random& rng) {
  Tensor<double> p({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < classes; ++c) s += p[i * classes + c] = rng.uniform01() + 1e-3;
    for (std::size_t c = 0; c < classes; ++c) p[i * classes + c] /= s;
  }
  return p;
}

std::vector<BlockConfig> parse_all(std::initializer_list<const char*> texts) {
  std::vector<BlockConfig> out;
  for (const char* t : texts) out.push_back(parse_config(t));
  return out;
}

}  // namespace

TEST(Average, SingleAndIdenticalMembers) {
  Random rng(1);
  const Tensor<double> a = random_probabilities(6, 4, rng);
  const Tensor<double> one[] = {a};
  EXPECT_EQ(average_probabilities(one), a);
  const Tensor<double> same[] = {a, a, a};
  const Tensor<double> avg = average_probabilities(same);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(avg[i], a[i], 1e-15);
}

TEST(Average, RowsStayOnSimplexAndMatchHandMean) {
  Random rng(2);
  std::vector<Tensor<double>> members;
  for (int m = 0; m < 5; ++m) members.push_back(random_probabilities(20, 10, rng));
  const Tensor<double> avg = average_probabilities(members);
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      double hand = 0;
      for (const auto& t : members) hand += t[i * 10 + c];
      EXPECT_NEAR(avg[i * 10 + c], hand / 5.0, 1e-15);
      s += avg[i * 10 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Average, RejectsBadMembers) {
  EXPECT_THROW(average_probabilities(std::span<const Tensor<double>>{}), ConfigError);
  Random rng(3);
  const Tensor<double> wide[] = {random_probabilities(4, 3, rng), random_probabilities(4, 5, rng)};
  EXPECT_THROW(average_probabilities(wide), ShapeError);
  const Tensor<double> tall[] = {random_probabilities(4, 3, rng), random_probabilities(5, 3, rng)};
  EXPECT_THROW(average_probabilities(tall), ShapeError);
}

TEST(Evaluate, UniformPredictorNearChanceError) {
  Random rng(4);
  const std::size_t n = 1000;
  const Tensor<double> p = random_probabilities(n, 10, rng);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(10));
  const EvalResult r = evaluate(p, labels);
  EXPECT_EQ(r.count, n);
  EXPECT_DOUBLE_EQ(r.error_percent, 100.0 * (1.0 - r.accuracy));
  const double halfwidth = 100.0 * oracle::binomial_halfwidth(0.9, n, 3.0);
  EXPECT_NEAR(r.error_percent, 90.0, halfwidth);
  EXPECT_THROW(evaluate(Tensor<double>({0, 10}), std::vector<int>{}), DataError);
}

TEST(Histogram, ExpectedCountsAllIdentical) {
  std::vector<BlockConfig> all(50, parse_config("conv(3)|conv(3)|sp_conv(1)|rc_conv(5)+add_det"));
  const std::vector<BlockConfig> top(all.begin(), all.begin() + 10);
  const ComponentHistogram h = component_histogram(all, top);
  EXPECT_EQ(h.config_count, 50u);
  EXPECT_EQ(h.top_count, 10u);
  EXPECT_EQ(h.buckets.size(), 12u);
  EXPECT_EQ(h.bucket("conv(3)").count_all, 100u);
  EXPECT_EQ(h.bucket("conv(3)").count_top, 20u);
  EXPECT_DOUBLE_EQ(h.bucket("conv(3)").expected_top, 20.0);
  EXPECT_DOUBLE_EQ(h.bucket("add_det").expected_top, 10.0);
  EXPECT_EQ(h.bucket("concat").count_all, 0u);
  EXPECT_THROW(h.bucket("conv(7)"), ConfigError);
}

TEST(Histogram, HandTallyOfThreeConfigs) {
  const auto all = parse_all({"conv(3)|sp_conv(5)+concat", "conv(3)|conv(3)|rc_conv(1)+add_det",
                              "sp_conv(5)+add_stc"});
  const auto top = parse_all({"conv(3)|sp_conv(5)+concat"});
  const ComponentHistogram h = component_histogram(all, top);
  // conv(3): 1 + 2 over all, 1 in top.
  EXPECT_EQ(h.bucket("conv(3)").count_all, 3u);
  EXPECT_EQ(h.bucket("conv(3)").count_top, 1u);
  EXPECT_DOUBLE_EQ(h.bucket("conv(3)").expected_top, 3.0 / 3.0);
  EXPECT_EQ(h.bucket("sp_conv(5)").count_all, 2u);
  EXPECT_DOUBLE_EQ(h.bucket("sp_conv(5)").expected_top, 2.0 / 3.0);
  EXPECT_EQ(h.bucket("rc_conv(1)").count_top, 0u);
  EXPECT_EQ(h.bucket("concat").count_top, 1u);
  EXPECT_TRUE(h.bucket("add_stc").is_combiner);
  EXPECT_FALSE(h.bucket("conv(1)").is_combiner);
  std::uint64_t ops = 0, combiners = 0, top_ops = 0;
  for (const auto& b : h.buckets) {
    (b.is_combiner ? combiners : ops) += b.count_all;
    if (!b.is_combiner) top_ops += b.count_top;
  }
  EXPECT_EQ(ops, 6u);
  EXPECT_EQ(combiners, 3u);
  EXPECT_EQ(top_ops, 2u);
  EXPECT_THROW(component_histogram(all, parse_all({"conv(5)+concat"})), ConfigError);
  EXPECT_THROW(component_histogram({}, {}), ConfigError);
}

TEST(EnsembleFile, JsonRoundTrip) {
  EnsembleSpec s;
  s.manifest_hash = 99;
  s.members.push_back({3, "conv(3)+concat", "trials/trial_0003.ckpt", 0.75});
  const EnsembleSpec back = ensemble_spec_from_json(ensemble_spec_to_json(s));
  EXPECT_EQ(back.manifest_hash, 99u);
  ASSERT_EQ(back.members.size(), 1u);
  EXPECT_EQ(back.members[0].checkpoint, s.members[0].checkpoint);
  auto j = ensemble_spec_to_json(s);
  j["aggregation"] = "vote";
  EXPECT_THROW(ensemble_spec_from_json(j), ParseError);
}

TEST(EndToEnd, EnsembleAndAnalysisOverTinyRun) {
  const fs::path dir = fs::temp_directory_path() / "blocknas_ensemble_run";
  fs::remove_all(dir);
  RunManifest m;
  m.dataset.synth.classes = 3;
  m.dataset.synth.image_size = 8;
  m.dataset.synth.samples_per_class = 30;
  m.search.trials = 3;
  m.search.top_k = 2;
  m.search.macro.stages = 1;
  m.search.macro.repeats = 1;
  m.search.macro.initial_filters = 8;
  m.search.macro.height = 8;
  m.search.macro.width = 8;
  m.search.macro.num_classes = 3;
  m.search.train.max_epochs = 3;
  m.search.train.early_stop_patience_epochs = 3;
  m.search.train.batch_size = 16;
  m.output_dir = dir.string();
  EXPECT_THROW(run_ensemble(dir.string(), 2), Error);
  const SearchRun run = launch_search(m);

  const EnsembleReport one = run_ensemble(dir.string(), 1);
  const EnsembleReport r = run_ensemble(dir.string(), 2, 2);
  EXPECT_FALSE(r.warning);
  ASSERT_EQ(r.spec.members.size(), 2u);
  EXPECT_GE(r.spec.members[0].val_acc, r.spec.members[1].val_acc);
  EXPECT_EQ(r.spec.manifest_hash, manifest_hash(m));
  EXPECT_DOUBLE_EQ(one.ensemble.accuracy, one.single.accuracy);
  EXPECT_DOUBLE_EQ(one.single.accuracy, r.single.accuracy);
  EXPECT_TRUE(fs::exists(dir / "ensemble.json"));

  // Recompute the ensemble from its members.
  const DataSplits data = load_profile(m.dataset);
  std::vector<Tensor<double>> probs;
  for (const auto& mem : r.spec.members)
    probs.push_back(model_predict(load_model(mem.config, m.search.macro, (dir / mem.checkpoint).string()), data.test));
  EXPECT_DOUBLE_EQ(evaluate(average_probabilities(probs), data.test.labels()).accuracy, r.ensemble.accuracy);

  const EnsembleReport many = run_ensemble(dir.string(), 10);
  EXPECT_TRUE(many.warning);
  EXPECT_EQ(many.spec.members.size(), 3u);

  const ComponentHistogram h = run_analysis(dir.string());
  EXPECT_EQ(h.config_count, 3u);
  EXPECT_EQ(h.top_count, 2u);
  EXPECT_TRUE(fs::exists(dir / "histogram.csv"));
  std::ifstream in(dir / "histogram.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("component"), std::string::npos);
  fs::remove_all(dir);
}
