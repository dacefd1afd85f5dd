#pragma once

// Run manifest: everything needed to reproduce a search, stored as JSON at
// <out>/manifest, plus the entry points that start or resume a run from it.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/datasets.hpp"
#include "blocknas/search.hpp"

namespace blocknas {

inline constexpr int kManifestVersion = 1;

struct RunManifest {
  int format_version = kManifestVersion;
  SearchConfig search;
  DatasetProfile dataset;
  std::string output_dir;

  void validate() const;
};

// {"format_version", "search": {trials, top_k, space, master_seed, jobs},
//  "macro", "train", "dataset", "output_dir"}
nlohmann::json manifest_to_json(const RunManifest& m);
// Throws ConfigError on an unknown format version or invalid contents.
RunManifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const std::string& path, const RunManifest& m);
RunManifest read_manifest(const std::string& path);

// Identity of the experiment; ignores jobs and output_dir, which do not
// change any result.
std::uint64_t manifest_hash(const RunManifest& m);

// The search configuration with augmentation taken from the dataset profile.
SearchConfig effective_search_config(const RunManifest& m);

// Throws ConfigError when the macro input or class count disagrees with
// the data.
void check_data_matches(const MacroConfig& macro, const DataSplits& data);

struct SearchRun {
  RunManifest manifest;
  std::vector<TrialRecord> records;
  std::vector<CurvePoint> curve;
  bool resumed_noop = false;
};

struct LaunchOptions {
  std::optional<int> jobs;
  std::function<void(const TrialRecord&)> on_trial;
};

// Fresh run in m.output_dir. Throws StateError if that directory already
// holds a trial log.
SearchRun launch_search(const RunManifest& m, const LaunchOptions& options = {});

// Continues the run stored in `run_dir`. A supplied manifest must hash
// like the stored one. A finished run is returned untouched.
SearchRun resume_search(const std::string& run_dir, const std::optional<RunManifest>& supplied = {},
                        const LaunchOptions& options = {});

// Loads the manifest and trial log of a finished or partial run.
SearchRun load_run(const std::string& run_dir);

}  // namespace blocknas
