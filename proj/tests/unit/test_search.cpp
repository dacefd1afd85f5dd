#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "blocknas/error.hpp"
#include "blocknas/manifest.hpp"
#include "blocknas/search.hpp"

using namespace blocknas;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("blocknas_search_" + name);
  fs::remove_all(p);
  return p;
}

RunManifest tiny_manifest(const fs::path& out, int trials = 4) {
  RunManifest m;
  m.dataset = default_profile("synthetic");
  m.dataset.synth.classes = 3;
  m.dataset.synth.image_size = 8;
  m.dataset.synth.samples_per_class = 30;
  m.dataset.synth.seed = 2;
  m.search.trials = trials;
  m.search.top_k = 2;
  m.search.master_seed = 11;
  m.search.macro.stages = 1;
  m.search.macro.repeats = 1;
  m.search.macro.initial_filters = 8;
  m.search.macro.height = 8;
  m.search.macro.width = 8;
  m.search.macro.num_classes = 3;
  m.search.train.max_epochs = 2;
  m.search.train.early_stop_patience_epochs = 2;
  m.search.train.batch_size = 16;
  m.output_dir = out.string();
  return m;
}

TrialRecord record(int index, double acc, TrialStatus status = TrialStatus::ok) {
  TrialRecord r;
  r.index = index;
  r.config = "conv(3)+add_det";
  r.canonical_config = r.config;
  r.best_val_acc = acc;
  r.status = status;
  return r;
}

void expect_same_outcome(const std::vector<TrialRecord>& a, const std::vector<TrialRecord>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].index, b[i].index);
    EXPECT_EQ(a[i].config, b[i].config);
    EXPECT_EQ(a[i].seed, b[i].seed);
    EXPECT_EQ(a[i].best_val_acc, b[i].best_val_acc) << i;
    EXPECT_EQ(a[i].epochs_run, b[i].epochs_run);
  }
}

}  // namespace

TEST(Plan, DeterministicSeedsAndDistinctBlocks) {
  SearchConfig c;
  c.trials = 40;
  c.master_seed = 5;
  const auto a = plan_trials(c), b = plan_trials(c);
  ASSERT_EQ(a.size(), 40u);
  std::set<std::string> canonical;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].index, static_cast<int>(i));
    EXPECT_EQ(a[i].seed, trial_seed(5, static_cast<int>(i)));
    EXPECT_EQ(a[i].config, b[i].config);
    canonical.insert(format_config(canonicalize(a[i].config)));
  }
  EXPECT_EQ(canonical.size(), 40u);
  c.master_seed = 6;
  EXPECT_NE(format_config(plan_trials(c)[0].config), format_config(a[0].config));
  EXPECT_NE(trial_seed(5, 0), trial_seed(5, 1));
}

TEST(Config, RoundTripAndValidation) {
  SearchConfig c;
  c.trials = 7;
  c.space = parse_space("branches=2;ops=conv(1),sp_conv(3);combiners=concat");
  EXPECT_EQ(search_config_from_json(search_config_to_json(c)), c);
  c.trials = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.trials = 5;
  c.jobs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Curve, RunningMaximum) {
  const auto curve = best_score_curve({record(0, 0.3), record(1, 0.5), record(2, 0.4)});
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[0].best_val_acc, 0.3);
  EXPECT_EQ(curve[1].best_val_acc, 0.5);
  EXPECT_EQ(curve[2].best_val_acc, 0.5);
  EXPECT_EQ(curve[2].trial_index, 2);
  const fs::path dir = temp_dir("curve");
  fs::create_directories(dir);
  write_curve_csv((dir / "c.csv").string(), curve);
  std::ifstream in(dir / "c.csv");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(text, "trial_index,best_val_acc\n0,0.300000\n1,0.500000\n2,0.500000\n");
  fs::remove_all(dir);
}

TEST(TopK, TiesAndShortfall) {
  const std::vector<TrialRecord> rs = {record(0, 0.9), record(1, 0.7), record(2, 0.9),
                                       record(3, 0.99, TrialStatus::failed)};
  const TopK one = select_top_k(rs, 1);
  ASSERT_EQ(one.records.size(), 1u);
  EXPECT_EQ(one.records[0].index, 0);
  EXPECT_FALSE(one.warning);
  const TopK two = select_top_k(rs, 2);
  EXPECT_EQ(two.records[1].index, 2);

  std::vector<TrialRecord> fifty;
  for (int i = 0; i < 50; ++i) fifty.push_back(record(i, i / 100.0));
  const TopK all = select_top_k(fifty, 100);
  EXPECT_EQ(all.records.size(), 50u);
  ASSERT_TRUE(all.warning);
  EXPECT_NE(all.warning->find("50"), std::string::npos);
  EXPECT_THROW(select_top_k({record(0, 0, TrialStatus::failed)}, 3), StateError);
  EXPECT_THROW(select_top_k(fifty, 0), ConfigError);
}

TEST(Log, RoundTripTornLineAndHash) {
  const fs::path dir = temp_dir("log");
  fs::create_directories(dir);
  const std::string path = (dir / "trials.log").string();
  {
    TrialLog log(path, 42);
    log.append(record(1, 0.5));
    log.append(record(0, 0.25));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"index\": 2, \"conf";
  }
  const auto contents = TrialLog::read(path);
  EXPECT_EQ(contents.config_hash, 42u);
  ASSERT_EQ(contents.records.size(), 2u);
  EXPECT_EQ(contents.records[0].index, 0);
  EXPECT_EQ(contents.records[1].best_val_acc, 0.5);
  EXPECT_THROW(TrialLog(path, 43), StateError);

  const std::string dup = (dir / "dup.log").string();
  {
    TrialLog log(dup, 1);
    log.append(record(0, 0.5));
    log.append(record(0, 0.6));
  }
  EXPECT_THROW(TrialLog::read(dup), DataError);
  fs::remove_all(dir);
}

TEST(Search, ParallelMatchesSequential) {
  const RunManifest m = tiny_manifest({});
  const DataSplits data = load_profile(m.dataset);
  SearchConfig seq = effective_search_config(m);
  SearchConfig par = seq;
  par.jobs = 4;
  const auto a = run_search(seq, data, {});
  const auto b = run_search(par, data, {});
  expect_same_outcome(a, b);
  EXPECT_EQ(data.test.read_count(), 0u);
}

TEST(Search, ResumeAfterInterruptionMatchesUninterrupted) {
  const fs::path full = temp_dir("full"), cut = temp_dir("cut");
  const SearchRun reference = launch_search(tiny_manifest(full));

  LaunchOptions stop_after_two;
  int seen = 0;
  stop_after_two.on_trial = [&](const TrialRecord&) {
    if (++seen == 2) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(launch_search(tiny_manifest(cut), stop_after_two), std::runtime_error);
  EXPECT_EQ(TrialLog::read((cut / "trials.log").string()).records.size(), 2u);
  EXPECT_THROW(launch_search(tiny_manifest(cut)), StateError);

  RunManifest other = tiny_manifest(cut);
  other.search.master_seed = 12;
  EXPECT_THROW(resume_search(cut.string(), other), StateError);

  const SearchRun resumed = resume_search(cut.string());
  EXPECT_FALSE(resumed.resumed_noop);
  expect_same_outcome(resumed.records, reference.records);
  ASSERT_EQ(resumed.curve.size(), reference.curve.size());
  for (std::size_t i = 0; i < resumed.curve.size(); ++i)
    EXPECT_EQ(resumed.curve[i].best_val_acc, reference.curve[i].best_val_acc);

  const SearchRun again = resume_search(cut.string());
  EXPECT_TRUE(again.resumed_noop);
  EXPECT_EQ(TrialLog::read((cut / "trials.log").string()).records.size(), 4u);
  EXPECT_TRUE(fs::exists(cut / "curve.csv"));
  EXPECT_TRUE(fs::exists(cut / resumed.records[0].checkpoint));
  fs::remove_all(full);
  fs::remove_all(cut);
}

TEST(Search, FailedTrialIsRecordedNotFatal) {
  RunManifest m = tiny_manifest({}, 2);
  m.search.train.lr_initial = 1e30;
  const DataSplits data = load_profile(m.dataset);
  const auto records = run_search(effective_search_config(m), data, {});
  ASSERT_EQ(records.size(), 2u);
  for (const auto& r : records) {
    EXPECT_EQ(r.status, TrialStatus::failed);
    EXPECT_EQ(r.best_val_acc, 0.0);
    EXPECT_FALSE(r.failure.empty());
  }
  EXPECT_THROW(select_top_k(records, 1), StateError);
}

TEST(Manifest, HashIgnoresJobsAndOutput) {
  RunManifest m = tiny_manifest("/tmp/a");
  RunManifest n = m;
  n.search.jobs = 3;
  n.output_dir = "/tmp/b";
  EXPECT_EQ(manifest_hash(m), manifest_hash(n));
  n.search.train.lr_initial = 0.2;
  EXPECT_NE(manifest_hash(m), manifest_hash(n));
  EXPECT_EQ(manifest_to_json(manifest_from_json(manifest_to_json(m))), manifest_to_json(m));
  EXPECT_THROW(manifest_from_json(nlohmann::json{{"format_version", 9}}), ConfigError);
  EXPECT_THROW(read_manifest("/nonexistent/manifest"), DataError);
  RunManifest mismatched = m;
  mismatched.search.macro.num_classes = 5;
  EXPECT_THROW(check_data_matches(mismatched.search.macro, load_profile(m.dataset)), ConfigError);
}
