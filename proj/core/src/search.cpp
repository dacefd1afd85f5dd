#include "blocknas/search.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "blocknas/error.hpp"
#include "blocknas/network.hpp"

namespace blocknas {

namespace fs = std::filesystem;

void SearchConfig::validate() const {
  if (trials < 1) throw ConfigError("search config: trials must be >= 1");
  if (top_k < 1) throw ConfigError("search config: top_k must be >= 1");
  if (jobs < 1) throw ConfigError("search config: jobs must be >= 1");
  macro.validate();
  train.validate();
}

nlohmann::json search_config_to_json(const SearchConfig& cfg) {
  return {{"trials", cfg.trials},
          {"top_k", cfg.top_k},
          {"space", space_to_json(cfg.space)},
          {"macro", macro_to_json(cfg.macro)},
          {"train", train_config_to_json(cfg.train)},
          {"master_seed", cfg.master_seed},
          {"jobs", cfg.jobs}};
}

SearchConfig search_config_from_json(const nlohmann::json& j) {
  SearchConfig cfg;
  try {
    cfg.trials = j.value("trials", cfg.trials);
    cfg.top_k = j.value("top_k", cfg.top_k);
    if (j.contains("space")) cfg.space = space_from_json(j.at("space"));
    if (j.contains("macro")) cfg.macro = macro_from_json(j.at("macro"));
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.jobs = j.value("jobs", cfg.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("search config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string_view to_string(TrialStatus status) { return status == TrialStatus::ok ? "ok" : "failed"; }

nlohmann::json trial_to_json(const TrialRecord& r) {
  return {{"index", r.index},
          {"config", r.config},
          {"canonical_config", r.canonical_config},
          {"seed", r.seed},
          {"params", r.params},
          {"best_val_acc", r.best_val_acc},
          {"best_epoch", r.best_epoch},
          {"epochs_run", r.epochs_run},
          {"stop_reason", std::string(to_string(r.stop_reason))},
          {"status", std::string(to_string(r.status))},
          {"failure", r.failure},
          {"checkpoint", r.checkpoint},
          {"wall_seconds", r.wall_seconds}};
}

TrialRecord trial_from_json(const nlohmann::json& j) {
  TrialRecord r;
  try {
    r.index = j.at("index").get<int>();
    r.config = j.at("config").get<std::string>();
    r.canonical_config = j.at("canonical_config").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.params = j.at("params").get<std::uint64_t>();
    r.best_val_acc = j.at("best_val_acc").get<double>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.epochs_run = j.at("epochs_run").get<int>();
    r.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
    const auto status = j.at("status").get<std::string>();
    if (status != "ok" && status != "failed") throw ParseError("unknown trial status '" + status + "'");
    r.status = status == "ok" ? TrialStatus::ok : TrialStatus::failed;
    r.failure = j.value("failure", std::string());
    r.checkpoint = j.value("checkpoint", std::string());
    r.wall_seconds = j.value("wall_seconds", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("trial record: ") + e.what());
  }
  return r;
}

std::uint64_t trial_seed(std::uint64_t master_seed, int index) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(index));
}

std::vector<PlannedTrial> plan_trials(const SearchConfig& cfg) {
  std::vector<PlannedTrial> plan;
  std::vector<BlockConfig> seen;
  plan.reserve(static_cast<std::size_t>(cfg.trials));
  for (int i = 0; i < cfg.trials; ++i) {
    const std::uint64_t seed = trial_seed(cfg.master_seed, i);
    Random rng(derive_seed(seed, 0));
    BlockConfig block = sample_block_avoiding(cfg.space, rng, seen);
    seen.push_back(canonicalize(block));
    plan.push_back({i, seed, std::move(block)});
  }
  return plan;
}

TrialLog::TrialLog(std::string path, std::uint64_t config_hash) : path_(std::move(path)) {
  if (!fs::exists(path_) || fs::file_size(path_) == 0) {
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw DataError("cannot create trial log " + path_);
    out << nlohmann::json{{"type", "header"}, {"format_version", 1}, {"config_hash", config_hash}}.dump() << '\n';
    return;
  }
  const Contents existing = read(path_);
  if (existing.config_hash != config_hash)
    throw StateError("trial log " + path_ + " belongs to a different configuration");
}

void TrialLog::append(const TrialRecord& record) {
  const std::string line = trial_to_json(record).dump() + '\n';
  std::lock_guard lock(mutex_);
  std::FILE* f = std::fopen(path_.c_str(), "ab");
  if (!f) throw DataError("cannot append to trial log " + path_);
  const bool written = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0;
  ::fsync(::fileno(f));
  std::fclose(f);
  if (!written) throw DataError("short write to trial log " + path_);
}

TrialLog::Contents TrialLog::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trial log " + path);
  std::vector<std::string> lines;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  bool torn_tail = false;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      lines.push_back(content.substr(pos));
      torn_tail = true;
      break;
    }
    lines.push_back(content.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw DataError("trial log " + path + " is empty");

  Contents out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const bool last = i + 1 == lines.size();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception&) {
      if (last && (torn_tail || i > 0)) break;
      throw DataError("trial log " + path + ": unreadable line " + std::to_string(i + 1));
    }
    if (i == 0) {
      if (!j.is_object() || j.value("type", std::string()) != "header" || !j.contains("config_hash"))
        throw DataError("trial log " + path + " has no header line");
      out.config_hash = j.at("config_hash").get<std::uint64_t>();
      continue;
    }
    TrialRecord r;
    try {
      r = trial_from_json(j);
    } catch (const ParseError& e) {
      if (last) break;
      throw DataError("trial log " + path + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
    out.records.push_back(std::move(r));
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const TrialRecord& a, const TrialRecord& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < out.records.size(); ++i)
    if (out.records[i].index == out.records[i - 1].index)
      throw DataError("trial log " + path + " records trial " + std::to_string(out.records[i].index) + " twice");
  return out;
}

namespace {

std::string trial_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "trial_%04d", index);
  return buf;
}

}  // namespace

TrialRecord run_trial(const PlannedTrial& trial, const SearchConfig& cfg, const DataSplits& data,
                      const std::string& run_dir) {
  TrialRecord r;
  r.index = trial.index;
  r.seed = trial.seed;
  r.config = format_config(trial.config);
  r.canonical_config = format_config(canonicalize(trial.config));
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(trial.seed, 2);
  TrainOptions opts;
  if (!run_dir.empty()) {
    const std::string stem = std::string("trials/") + trial_stem(trial.index);
    r.checkpoint = stem + ".ckpt";
    opts.checkpoint_path = (fs::path(run_dir) / r.checkpoint).string();
    opts.metrics_path = (fs::path(run_dir) / (stem + ".metrics.jsonl")).string();
  }
  try {
    ArchGraph graph = build_architecture(trial.config, cfg.macro);
    r.params = graph.total_params;
    Network<float> net(std::move(graph), derive_seed(trial.seed, 1));
    const TrainResult result = train_model(net, data, tc, opts);
    r.best_val_acc = result.best_val_acc;
    r.best_epoch = result.best_epoch;
    r.epochs_run = static_cast<int>(result.history.size());
    r.stop_reason = result.stop_reason;
    r.wall_seconds = result.wall_seconds;
    if (!result.ok()) {
      r.status = TrialStatus::failed;
      r.failure = result.failure;
      r.checkpoint.clear();
    }
  } catch (const std::exception& e) {
    r.status = TrialStatus::failed;
    r.failure = e.what();
    r.best_val_acc = 0.0;
    r.best_epoch = -1;
    r.checkpoint.clear();
  }
  return r;
}

std::vector<TrialRecord> run_search(const SearchConfig& cfg, const DataSplits& data, const SearchOptions& options,
                                    std::vector<TrialRecord> existing) {
  cfg.validate();
  const std::vector<PlannedTrial> plan = plan_trials(cfg);
  std::vector<std::optional<TrialRecord>> slots(plan.size());
  for (auto& r : existing) {
    if (r.index < 0 || r.index >= cfg.trials)
      throw StateError("recorded trial " + std::to_string(r.index) + " is outside 0.." +
                       std::to_string(cfg.trials - 1));
    if (r.config != format_config(plan[static_cast<std::size_t>(r.index)].config))
      throw StateError("recorded trial " + std::to_string(r.index) + " has config " + r.config +
                       " but the plan samples " + format_config(plan[static_cast<std::size_t>(r.index)].config));
    const auto idx = static_cast<std::size_t>(r.index);
    slots[idx] = std::move(r);
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (!slots[i]) pending.push_back(i);

  std::optional<TrialLog> log;
  if (!options.run_dir.empty()) {
    fs::create_directories(fs::path(options.run_dir) / "trials");
    log.emplace((fs::path(options.run_dir) / "trials.log").string(), options.config_hash);
  }

  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const std::size_t i = pending[k];
      try {
        TrialRecord r = run_trial(plan[i], cfg, data, options.run_dir);
        if (log) log->append(r);
        std::lock_guard lock(callback_mutex);
        if (options.on_trial) options.on_trial(r);
        slots[i] = std::move(r);
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!error) error = std::current_exception();
        next.store(pending.size());
        return;
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), pending.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);

  std::vector<TrialRecord> records;
  records.reserve(slots.size());
  for (auto& s : slots) records.push_back(std::move(*s));
  if (!options.run_dir.empty())
    write_curve_csv((fs::path(options.run_dir) / "curve.csv").string(), best_score_curve(records));
  return records;
}

std::vector<CurvePoint> best_score_curve(const std::vector<TrialRecord>& records) {
  std::vector<CurvePoint> curve;
  curve.reserve(records.size());
  double best = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    best = i == 0 ? records[i].best_val_acc : std::max(best, records[i].best_val_acc);
    curve.push_back({records[i].index, best});
  }
  return curve;
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "trial_index,best_val_acc\n";
    char buf[64];
    for (const auto& p : curve) {
      std::snprintf(buf, sizeof buf, "%d,%.6f\n", p.trial_index, p.best_val_acc);
      out << buf;
    }
    if (!out) throw DataError("short write to " + path);
  }
  fs::rename(tmp, path);
}

TopK select_top_k(const std::vector<TrialRecord>& records, int k) {
  if (k < 1) throw ConfigError("top-k needs k >= 1, got " + std::to_string(k));
  TopK out;
  for (const auto& r : records)
    if (r.ok()) out.records.push_back(r);
  if (out.records.empty()) throw StateError("no successful trials to select from");
  std::stable_sort(out.records.begin(), out.records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    if (a.best_val_acc != b.best_val_acc) return a.best_val_acc > b.best_val_acc;
    return a.index < b.index;
  });
  if (static_cast<std::size_t>(k) > out.records.size()) {
    out.warning = "requested top-" + std::to_string(k) + " but only " + std::to_string(out.records.size()) +
                  " successful trials exist; using all of them";
  } else {
    out.records.resize(static_cast<std::size_t>(k));
  }
  return out;
}

}  // namespace blocknas
