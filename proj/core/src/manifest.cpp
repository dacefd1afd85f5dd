#include "blocknas/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blocknas/error.hpp"
#include "blocknas/random.hpp"

namespace blocknas {

namespace fs = std::filesystem;

void RunManifest::validate() const {
  if (format_version != kManifestVersion)
    throw ConfigError("unsupported manifest format_version " + std::to_string(format_version) + " (expected " +
                      std::to_string(kManifestVersion) + ")");
  search.validate();
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  return {{"format_version", m.format_version},
          {"search",
           {{"trials", m.search.trials},
            {"top_k", m.search.top_k},
            {"space", space_to_json(m.search.space)},
            {"master_seed", m.search.master_seed},
            {"jobs", m.search.jobs}}},
          {"macro", macro_to_json(m.search.macro)},
          {"train", train_config_to_json(m.search.train)},
          {"dataset", profile_to_json(m.dataset)},
          {"output_dir", m.output_dir}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  RunManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestVersion) m.validate();
    nlohmann::json s = j.value("search", nlohmann::json::object());
    if (j.contains("macro")) s["macro"] = j.at("macro");
    if (j.contains("train")) s["train"] = j.at("train");
    m.search = search_config_from_json(s);
    if (j.contains("dataset")) m.dataset = profile_from_json(j.at("dataset"));
    m.output_dir = j.value("output_dir", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path);
    out << manifest_to_json(m).dump(2) << '\n';
    if (!out) throw DataError("short write to manifest " + path);
  }
  fs::rename(tmp, path);
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

std::uint64_t manifest_hash(const RunManifest& m) {
  nlohmann::json j = manifest_to_json(m);
  j["search"].erase("jobs");
  j.erase("output_dir");
  return fnv1a64(j.dump());
}

SearchConfig effective_search_config(const RunManifest& m) {
  SearchConfig cfg = m.search;
  cfg.train.augment_crop = m.dataset.augment_crop;
  cfg.train.augment_flip = m.dataset.augment_flip;
  return cfg;
}

void check_data_matches(const MacroConfig& macro, const DataSplits& data) {
  const auto& t = data.train;
  if (t.height() != static_cast<std::size_t>(macro.height) || t.width() != static_cast<std::size_t>(macro.width) ||
      t.channels() != static_cast<std::size_t>(macro.channels))
    throw ConfigError("macro input " + std::to_string(macro.height) + "x" + std::to_string(macro.width) + "x" +
                      std::to_string(macro.channels) + " does not match data " + std::to_string(t.height()) + "x" +
                      std::to_string(t.width()) + "x" + std::to_string(t.channels()));
  if (t.num_classes() != macro.num_classes)
    throw ConfigError("macro has " + std::to_string(macro.num_classes) + " classes but data has " +
                      std::to_string(t.num_classes()));
}

namespace {

SearchRun execute(RunManifest m, std::vector<TrialRecord> existing, const LaunchOptions& options) {
  if (options.jobs) m.search.jobs = *options.jobs;
  m.validate();
  const DataSplits data = load_profile(m.dataset);
  check_data_matches(m.search.macro, data);
  SearchOptions so;
  so.run_dir = m.output_dir;
  so.config_hash = manifest_hash(m);
  so.on_trial = options.on_trial;
  SearchRun run;
  run.records = run_search(effective_search_config(m), data, so, std::move(existing));
  run.curve = best_score_curve(run.records);
  run.manifest = std::move(m);
  return run;
}

}  // namespace

SearchRun launch_search(const RunManifest& m, const LaunchOptions& options) {
  m.validate();
  if (m.output_dir.empty()) throw ConfigError("manifest has no output_dir");
  const fs::path dir(m.output_dir);
  if (fs::exists(dir / "trials.log"))
    throw StateError("run directory " + m.output_dir + " already holds a search; use --resume to continue it");
  fs::create_directories(dir);
  write_manifest((dir / "manifest").string(), m);
  return execute(m, {}, options);
}

SearchRun resume_search(const std::string& run_dir, const std::optional<RunManifest>& supplied,
                        const LaunchOptions& options) {
  const fs::path dir(run_dir);
  RunManifest stored = read_manifest((dir / "manifest").string());
  stored.output_dir = run_dir;
  const std::uint64_t hash = manifest_hash(stored);
  if (supplied && manifest_hash(*supplied) != hash)
    throw StateError("manifest does not match the run in " + run_dir + " (config hash " +
                     std::to_string(manifest_hash(*supplied)) + " vs " + std::to_string(hash) + ")");
  const fs::path log_path = dir / "trials.log";
  std::vector<TrialRecord> existing;
  if (fs::exists(log_path)) {
    TrialLog::Contents contents = TrialLog::read(log_path.string());
    if (contents.config_hash != hash)
      throw StateError("trial log in " + run_dir + " was written by a different configuration");
    existing = std::move(contents.records);
  }
  if (existing.size() == static_cast<std::size_t>(stored.search.trials)) {
    SearchRun run;
    run.records = std::move(existing);
    run.curve = best_score_curve(run.records);
    run.manifest = std::move(stored);
    run.resumed_noop = true;
    return run;
  }
  return execute(std::move(stored), std::move(existing), options);
}

SearchRun load_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  SearchRun run;
  run.manifest = read_manifest((dir / "manifest").string());
  run.manifest.output_dir = run_dir;
  TrialLog::Contents contents = TrialLog::read((dir / "trials.log").string());
  if (contents.config_hash != manifest_hash(run.manifest))
    throw StateError("trial log in " + run_dir + " was written by a different configuration");
  run.records = std::move(contents.records);
  run.curve = best_score_curve(run.records);
  return run;
}

}  // namespace blocknas
