#include "blocknas/ensemble.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "blocknas/checkpoint.hpp"
#include "blocknas/error.hpp"
#include "blocknas/manifest.hpp"

namespace blocknas {

namespace fs = std::filesystem;

LoadedModel load_model(const std::string& config, const MacroConfig& macro, const std::string& checkpoint_path) {
  LoadedModel m;
  m.config = config;
  m.net = std::make_unique<Network<float>>(build_architecture(parse_config(config), macro), 0);
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  restore_checkpoint(*m.net, ckpt);
  const NamedTensor* mean = ckpt.find("input_mean", TensorRole::auxiliary);
  if (!mean) throw DataError("checkpoint " + checkpoint_path + " has no input_mean");
  const Extents want{static_cast<std::size_t>(macro.height), static_cast<std::size_t>(macro.width),
                     static_cast<std::size_t>(macro.channels)};
  if (mean->value.shape() != want)
    throw DataError("checkpoint " + checkpoint_path + " input_mean is " + format_extents(mean->value.shape()));
  m.stats.mean_image = mean->value.cast<float>();
  return m;
}

Tensor<double> model_predict(const LoadedModel& model, const LabeledImageSet& set) {
  Tensor<double> p = predict_set(*model.net, set, model.stats).cast<double>();
  const std::size_t c = p.shape().back();
  for (std::size_t r = 0; r < p.size() / c; ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += p[r * c + k];
    for (std::size_t k = 0; k < c; ++k) p[r * c + k] /= sum;
  }
  return p;
}

Tensor<double> average_probabilities(std::span<const Tensor<double>> members) {
  if (members.empty()) throw ConfigError("ensemble needs at least one member");
  const Tensor<double>& first = members.front();
  if (first.rank() != 2) throw ShapeError("member output must be examples x classes, got " + format_extents(first.shape()));
  Tensor<double> out(first.shape());
  for (std::size_t m = 0; m < members.size(); ++m) {
    const Tensor<double>& t = members[m];
    if (t.rank() != 2 || t.dim(1) != first.dim(1))
      throw ShapeError("ensemble member " + std::to_string(m) + " outputs " + format_extents(t.shape()) +
                       " but member 0 outputs " + format_extents(first.shape()) + " (class count mismatch)");
    if (t.dim(0) != first.dim(0))
      throw ShapeError("ensemble member " + std::to_string(m) + " scored " + std::to_string(t.dim(0)) +
                       " examples, member 0 scored " + std::to_string(first.dim(0)));
    for (std::size_t i = 0; i < t.size(); ++i) out[i] += t[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

Tensor<double> ensemble_predict(std::span<const LoadedModel> members, const LabeledImageSet& set, int jobs) {
  if (members.empty()) throw ConfigError("ensemble needs at least one member");
  const int classes = members.front().net->graph().macro.num_classes;
  for (std::size_t m = 1; m < members.size(); ++m)
    if (members[m].net->graph().macro.num_classes != classes)
      throw ConfigError("ensemble member " + std::to_string(m) + " has " +
                        std::to_string(members[m].net->graph().macro.num_classes) + " classes, member 0 has " +
                        std::to_string(classes));
  std::vector<Tensor<double>> outputs(members.size());
  const auto workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, members.size());
  if (workers == 1) {
    for (std::size_t m = 0; m < members.size(); ++m) outputs[m] = model_predict(members[m], set);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        try {
          for (std::size_t m = w; m < members.size(); m += workers) outputs[m] = model_predict(members[m], set);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return average_probabilities(outputs);
}

EvalResult evaluate(const Tensor<double>& probabilities, std::span<const int> labels) {
  if (labels.empty()) throw DataError("cannot evaluate on an empty split");
  if (probabilities.rank() != 2 || probabilities.dim(0) != labels.size())
    throw ShapeError("probabilities " + format_extents(probabilities.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t c = probabilities.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double* row = probabilities.data() + r * c;
    correct += static_cast<int>(std::max_element(row, row + c) - row) == labels[r] ? 1 : 0;
  }
  EvalResult e;
  e.count = labels.size();
  e.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  e.error_percent = 100.0 * (1.0 - e.accuracy);
  return e;
}

const HistogramBucket& ComponentHistogram::bucket(const std::string& component) const {
  for (const auto& b : buckets)
    if (b.component == component) return b;
  throw ConfigError("no histogram bucket '" + component + "'");
}

ComponentHistogram component_histogram(std::span<const BlockConfig> configs, std::span<const BlockConfig> top) {
  if (configs.empty()) throw ConfigError("component histogram needs at least one config");
  std::map<std::string, int> pool;
  for (const auto& c : configs) ++pool[format_config(canonicalize(c))];
  for (const auto& t : top) {
    auto it = pool.find(format_config(canonicalize(t)));
    if (it == pool.end() || it->second == 0)
      throw ConfigError("top config " + format_config(t) + " is not among the searched configs");
    --it->second;
  }

  ComponentHistogram h;
  h.config_count = configs.size();
  h.top_count = top.size();
  const auto& ops = canonical_ops();
  const auto& combiners = canonical_combiners();
  for (const auto& op : ops) h.buckets.push_back({op.str(), false, 0, 0, 0.0});
  for (const auto c : combiners) h.buckets.push_back({std::string(to_string(c)), true, 0, 0, 0.0});
  auto tally = [&](std::span<const BlockConfig> set, bool is_top) {
    for (const auto& cfg : set) {
      for (const auto& br : cfg.branches()) {
        const auto i = static_cast<std::size_t>(std::find(ops.begin(), ops.end(), br) - ops.begin());
        (is_top ? h.buckets[i].count_top : h.buckets[i].count_all) += 1;
      }
      const auto j = ops.size() +
                     static_cast<std::size_t>(std::find(combiners.begin(), combiners.end(), cfg.combiner()) -
                                              combiners.begin());
      (is_top ? h.buckets[j].count_top : h.buckets[j].count_all) += 1;
    }
  };
  tally(configs, false);
  tally(top, true);
  for (auto& b : h.buckets)
    b.expected_top = static_cast<double>(b.count_all) * static_cast<double>(top.size()) /
                     static_cast<double>(configs.size());
  return h;
}

void write_histogram_csv(const std::string& path, const ComponentHistogram& hist) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << "component,count_all,count_top,expected_top\n";
  char buf[128];
  for (const auto& b : hist.buckets) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%llu,%.6f\n", b.component.c_str(),
                  static_cast<unsigned long long>(b.count_all), static_cast<unsigned long long>(b.count_top),
                  b.expected_top);
    out << buf;
  }
  if (!out) throw DataError("short write to " + path);
}

nlohmann::json ensemble_spec_to_json(const EnsembleSpec& spec) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : spec.members)
    members.push_back(
        {{"trial_index", m.trial_index}, {"config", m.config}, {"checkpoint", m.checkpoint}, {"val_acc", m.val_acc}});
  return {{"manifest_hash", spec.manifest_hash}, {"aggregation", spec.aggregation}, {"members", members}};
}

EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j) {
  EnsembleSpec s;
  try {
    s.manifest_hash = j.at("manifest_hash").get<std::uint64_t>();
    s.aggregation = j.value("aggregation", s.aggregation);
    for (const auto& m : j.at("members"))
      s.members.push_back({m.at("trial_index").get<int>(), m.at("config").get<std::string>(),
                           m.at("checkpoint").get<std::string>(), m.value("val_acc", 0.0)});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ensemble.json: ") + e.what());
  }
  if (s.aggregation != "mean_softmax") throw ParseError("unsupported aggregation '" + s.aggregation + "'");
  if (s.members.empty()) throw ParseError("ensemble.json has no members");
  return s;
}

namespace {

nlohmann::json eval_json(const EvalResult& e) {
  return {{"accuracy", e.accuracy}, {"error_percent", e.error_percent}, {"count", e.count}};
}

}  // namespace

EnsembleReport run_ensemble(const std::string& run_dir, int top_k, int jobs) {
  const SearchRun run = load_run(run_dir);
  if (run.records.size() != static_cast<std::size_t>(run.manifest.search.trials))
    throw StateError("run in " + run_dir + " has " + std::to_string(run.records.size()) + " of " +
                     std::to_string(run.manifest.search.trials) + " trials; resume it first");
  TopK top = select_top_k(run.records, top_k);

  EnsembleReport report;
  report.warning = top.warning;
  report.spec.manifest_hash = manifest_hash(run.manifest);
  std::vector<LoadedModel> models;
  for (const auto& r : top.records) {
    report.spec.members.push_back({r.index, r.config, r.checkpoint, r.best_val_acc});
    models.push_back(load_model(r.config, run.manifest.search.macro, (fs::path(run_dir) / r.checkpoint).string()));
  }

  const DataSplits data = load_profile(run.manifest.dataset);
  check_data_matches(run.manifest.search.macro, data);
  const Tensor<double> single = model_predict(models.front(), data.test);
  report.single = evaluate(single, data.test.labels());
  report.ensemble = evaluate(ensemble_predict(models, data.test, jobs), data.test.labels());

  nlohmann::json j = ensemble_spec_to_json(report.spec);
  j["test"] = {{"single", eval_json(report.single)}, {"ensemble", eval_json(report.ensemble)}};
  if (report.warning) j["warning"] = *report.warning;
  std::ofstream out(fs::path(run_dir) / "ensemble.json", std::ios::trunc);
  if (!out) throw DataError("cannot write ensemble.json in " + run_dir);
  out << j.dump(2) << '\n';
  return report;
}

ComponentHistogram run_analysis(const std::string& run_dir, std::optional<int> top_k) {
  const SearchRun run = load_run(run_dir);
  std::vector<BlockConfig> all;
  for (const auto& r : run.records) all.push_back(parse_config(r.config));
  std::vector<BlockConfig> top;
  for (const auto& r : select_top_k(run.records, top_k.value_or(run.manifest.search.top_k)).records)
    top.push_back(parse_config(r.config));
  ComponentHistogram h = component_histogram(all, top);
  write_histogram_csv((fs::path(run_dir) / "histogram.csv").string(), h);
  return h;
}

}  // namespace blocknas
