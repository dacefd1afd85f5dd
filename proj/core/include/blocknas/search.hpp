#pragma once

// Random search over building blocks: plan T trials from a master seed,
// train each one, log the records and rank them.

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blocknas/archgraph.hpp"
#include "blocknas/blockspace.hpp"
#include "blocknas/datasets.hpp"
#include "blocknas/trainer.hpp"

namespace blocknas {

struct SearchConfig {
  int trials = 50;
  int top_k = 10;
  SearchSpace space = SearchSpace::full();
  MacroConfig macro;
  TrainConfig train;
  std::uint64_t master_seed = 0;
  int jobs = 1;

  void validate() const;

  friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

nlohmann::json search_config_to_json(const SearchConfig& cfg);
SearchConfig search_config_from_json(const nlohmann::json& j);

enum class TrialStatus { ok, failed };
std::string_view to_string(TrialStatus status);

struct TrialRecord {
  int index = 0;
  std::string config;            // as sampled
  std::string canonical_config;  // canonicalize(config)
  std::uint64_t seed = 0;
  std::uint64_t params = 0;
  double best_val_acc = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  StopReason stop_reason = StopReason::max_epochs;
  TrialStatus status = TrialStatus::ok;
  std::string failure;
  std::string checkpoint;  // relative to the run directory
  double wall_seconds = 0.0;

  bool ok() const { return status == TrialStatus::ok; }
};

nlohmann::json trial_to_json(const TrialRecord& r);
TrialRecord trial_from_json(const nlohmann::json& j);

std::uint64_t trial_seed(std::uint64_t master_seed, int index);

struct PlannedTrial {
  int index;
  std::uint64_t seed;
  BlockConfig config;
};

// Block i is drawn from a stream seeded by trial_seed(master, i), resampled
// away from the canonical forms of blocks 0..i-1 (at most 100 draws).
std::vector<PlannedTrial> plan_trials(const SearchConfig& cfg);

// Append-only line-delimited log. The first line is a header carrying the
// configuration hash; every following line is one TrialRecord.
class TrialLog {
 public:
  // Opens for appending, writing the header when the file is new.
  TrialLog(std::string path, std::uint64_t config_hash);

  void append(const TrialRecord& record);
  const std::string& path() const { return path_; }

  struct Contents {
    std::uint64_t config_hash = 0;
    // Sorted by index, one per index.
    std::vector<TrialRecord> records;
  };
  // A torn final line is ignored; any other unreadable line, a missing
  // header or a duplicate index throws DataError.
  static Contents read(const std::string& path);

 private:
  std::string path_;
  std::mutex mutex_;
};

// Trains one planned trial. Divergence or a failing build yields a failed
// record with validation accuracy 0.
TrialRecord run_trial(const PlannedTrial& trial, const SearchConfig& cfg, const DataSplits& data,
                      const std::string& run_dir);

struct SearchOptions {
  // Holds trials.log, curve.csv and trials/; empty keeps everything in
  // memory.
  std::string run_dir;
  std::uint64_t config_hash = 0;
  std::function<void(const TrialRecord&)> on_trial;
};

// Runs the trials missing from `existing` with up to cfg.jobs workers and
// returns all cfg.trials records ordered by index.
std::vector<TrialRecord> run_search(const SearchConfig& cfg, const DataSplits& data, const SearchOptions& options,
                                    std::vector<TrialRecord> existing = {});

struct CurvePoint {
  int trial_index;
  double best_val_acc;
};

// Running maximum of validation accuracy over records ordered by index.
std::vector<CurvePoint> best_score_curve(const std::vector<TrialRecord>& records);
void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

struct TopK {
  std::vector<TrialRecord> records;
  // Set when fewer than k ok records exist.
  std::optional<std::string> warning;
};

// Highest validation accuracy first, ties to the lower index, failed
// records excluded. Throws StateError when no record is ok and ConfigError
// when k < 1.
TopK select_top_k(const std::vector<TrialRecord>& records, int k);

}  // namespace blocknas
