#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "blocknas/blockspace.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using blocknas::cli::run;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kData = {"--dataset",    "synthetic", "--synth-classes",  "3", "--synth-size", "8",
                                        "--synth-per-class", "30",   "--synth-difficulty", "0.1"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST(Cli, SampleIsSeededAndParses) {
  const Outcome a = call({"sample", "--seed", "3", "-n", "5"});
  const Outcome b = call({"sample", "--seed", "3", "-n", "5"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  std::istringstream lines(a.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    EXPECT_NO_THROW(blocknas::parse_config(line)) << line;
    ++count;
  }
  EXPECT_EQ(count, 5);
  EXPECT_NE(call({"sample", "--seed", "4", "-n", "5"}).out, a.out);
}

TEST(Cli, DescribeReportsCalibratedSize) {
  const Outcome d = call({"describe", "--config", "conv(5)|sp_conv(1)|sp_conv(3)|rc_conv(3)+add"});
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_NE(d.out.find("params=2053930"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const Outcome bad = call({"describe", "--config", "conv(7)+concat"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(bad.err.rfind("blocknas: ", 0), 0u) << bad.err;
  EXPECT_EQ(bad.err.find('\n'), bad.err.size() - 1);
  EXPECT_EQ(call({"frobnicate"}).code, 1);
  EXPECT_EQ(call({}).code, 1);
  const Outcome missing = call({"train", "--config", "conv(3)+concat", "--dataset", "cifar10", "--data-path",
                                "/nonexistent/cifar", "--out", "/tmp/blocknas_cli_missing"});
  EXPECT_EQ(missing.code, 2) << missing.err;
  EXPECT_EQ(call({"ensemble", "--run-dir", "/nonexistent/run"}).code, 2);
}

TEST(Cli, TrainWritesArtifacts) {
  const fs::path dir = fs::temp_directory_path() / "blocknas_cli_train";
  fs::remove_all(dir);
  const Outcome t = call(with({"train", "--config", "conv(3)|sp_conv(3)+add_det", "--macro", "stages=1,n=1,filters=8",
                               "--out", dir.string(), "--epochs", "2", "--batch-size", "16"},
                              kData));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("test_error "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "metrics.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "result.json"));
  fs::remove_all(dir);
}

TEST(Cli, SearchResumeEnsembleAnalyze) {
  const fs::path dir = fs::temp_directory_path() / "blocknas_cli_run";
  const fs::path manifest = fs::temp_directory_path() / "blocknas_cli_manifest.json";
  fs::remove_all(dir);
  const Outcome m = call(with({"manifest", "--write", manifest.string(), "--out", dir.string(), "--macro",
                               "stages=1,n=1,filters=8", "--trials", "3", "--top-k", "2", "--seed", "5", "--epochs",
                               "2", "--batch-size", "16"},
                              kData));
  ASSERT_EQ(m.code, 0) << m.err;
  const Outcome s = call({"search", "--manifest", manifest.string(), "--jobs", "2"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("run_dir " + dir.string()), std::string::npos);
  EXPECT_EQ(call({"search", "--manifest", manifest.string()}).code, 3);
  const Outcome r = call({"search", "--run-dir", dir.string(), "--resume"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("already complete"), std::string::npos);

  const Outcome e = call({"ensemble", "--run-dir", dir.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("members 2"), std::string::npos);
  EXPECT_NE(e.out.find("ensemble "), std::string::npos);
  const Outcome wide = call({"ensemble", "--run-dir", dir.string(), "--top-k", "9"});
  EXPECT_EQ(wide.code, 0);
  EXPECT_NE(wide.err.find("warning"), std::string::npos);

  const Outcome a = call({"analyze", "--run-dir", dir.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out.rfind("component,count_all,count_top,expected_top\n", 0), 0u);
  fs::remove_all(dir);
  fs::remove(manifest);
}
