#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "blocknas/archgraph.hpp"
#include "blocknas/blockspace.hpp"
#include "blocknas/checkpoint.hpp"
#include "blocknas/datasets.hpp"
#include "blocknas/ensemble.hpp"
#include "blocknas/error.hpp"
#include "blocknas/manifest.hpp"
#include "blocknas/search.hpp"
#include "blocknas/trainer.hpp"

namespace blocknas::cli {

namespace fs = std::filesystem;

namespace {

std::string output_root() {
  const char* env = std::getenv("BLOCKNAS_OUTPUT_ROOT");
  return env && *env ? env : "runs";
}

std::string resolve_output(const std::string& dir, const std::string& fallback) {
  if (dir.empty()) return (fs::path(output_root()) / fallback).string();
  if (fs::path(dir).is_relative() && std::getenv("BLOCKNAS_OUTPUT_ROOT"))
    return (fs::path(output_root()) / dir).string();
  return dir;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Options shared by commands that pick a dataset.
struct DataFlags {
  std::string name = "synthetic";
  std::string path;
  std::optional<std::size_t> val_size;
  std::optional<std::uint64_t> split_seed;
  std::optional<int> classes;
  std::optional<int> image_size;
  std::optional<int> per_class;
  std::optional<double> difficulty;
  std::optional<std::uint64_t> data_seed;

  void add(CLI::App* app) {
    app->add_option("--dataset", name, "synthetic, cifar10, mnist, cifar100, svhn or fer2013");
    app->add_option("--data-path", path, "dataset directory");
    app->add_option("--val-size", val_size, "validation examples held out of training");
    app->add_option("--split-seed", split_seed, "seed of the validation split");
    app->add_option("--synth-classes", classes, "synthetic class count");
    app->add_option("--synth-size", image_size, "synthetic image side");
    app->add_option("--synth-per-class", per_class, "synthetic examples per class");
    app->add_option("--synth-difficulty", difficulty, "synthetic noise level");
    app->add_option("--synth-seed", data_seed, "synthetic generator seed");
  }

  DatasetProfile profile() const {
    DatasetProfile p = default_profile(name);
    p.path = path;
    if (val_size) p.val_size = *val_size;
    if (split_seed) p.split_seed = *split_seed;
    if (classes) p.synth.classes = *classes;
    if (image_size) p.synth.image_size = *image_size;
    if (per_class) p.synth.samples_per_class = *per_class;
    if (difficulty) p.synth.difficulty = *difficulty;
    if (data_seed) p.synth.seed = *data_seed;
    return p;
  }
};

// Training hyperparameter overrides.
struct TrainFlags {
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<int> lr_drop_every;
  std::optional<int> patience;
  std::optional<double> weight_decay;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "maximum epochs");
    app->add_option("--batch-size", batch_size, "minibatch size");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--lr-drop-every", lr_drop_every, "epochs between learning-rate halvings");
    app->add_option("--patience", patience, "early-stopping patience in epochs");
    app->add_option("--weight-decay", weight_decay, "L2 weight decay");
  }

  TrainConfig apply(TrainConfig c) const {
    if (epochs) c.max_epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) c.lr_initial = *lr;
    if (lr_drop_every) c.lr_drop_every_epochs = *lr_drop_every;
    if (patience) c.early_stop_patience_epochs = *patience;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (c.early_stop_patience_epochs > c.max_epochs) c.early_stop_patience_epochs = c.max_epochs;
    c.validate();
    return c;
  }
};

// The default macro with the input geometry and class count of the data.
MacroConfig macro_for(const std::string& text, int height, int width, int channels, int classes) {
  MacroConfig base;
  base.height = height;
  base.width = width;
  base.channels = channels;
  base.num_classes = classes;
  MacroConfig m = parse_macro(text, base);
  m.validate();
  return m;
}

MacroConfig macro_for_profile(const std::string& text, const DatasetProfile& p) {
  if (p.name == "synthetic")
    return macro_for(text, p.synth.image_size, p.synth.image_size, p.synth.channels, p.synth.classes);
  if (p.name == "mnist") return macro_for(text, 28, 28, 1, 10);
  if (p.name == "cifar100") return macro_for(text, 32, 32, 3, 100);
  if (p.name == "fer2013") return macro_for(text, 48, 48, 1, 7);
  return macro_for(text, 32, 32, 3, 10);
}

void print_trial(std::ostream& err, const TrialRecord& r) {
  err << "trial " << r.index << " " << to_string(r.status) << " val_acc=" << fmt("%.4f", r.best_val_acc)
      << " epochs=" << r.epochs_run << " params=" << r.params << " " << r.config;
  if (!r.ok()) err << " (" << r.failure << ")";
  err << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Random search over CNN building blocks", "blocknas"};
  app.require_subcommand(1);

  // sample
  auto* sample = app.add_subcommand("sample", "print sampled block configs");
  std::string space_text = format_space(SearchSpace::full());
  std::uint64_t sample_seed = 0;
  int sample_count = 1;
  bool sample_canonical = false;
  sample->add_option("--space", space_text, "search space, e.g. branches=4;ops=all;combiners=all");
  sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("-n,--count", sample_count, "number of configs")->check(CLI::PositiveNumber);
  sample->add_flag("--canonical", sample_canonical, "print canonical forms");

  // describe
  auto* describe = app.add_subcommand("describe", "print the layer graph of a block config");
  std::string describe_config;
  std::string describe_macro;
  describe->add_option("--config", describe_config, "block config string")->required();
  describe->add_option("--macro", describe_macro, "macro overrides, e.g. stages=3,n=9,filters=64");

  // train
  auto* train = app.add_subcommand("train", "train one architecture and report test accuracy");
  std::string train_config;
  std::string train_macro;
  std::string train_out;
  std::uint64_t train_seed = 0;
  DataFlags train_data;
  TrainFlags train_flags;
  train->add_option("--config", train_config, "block config string")->required();
  train->add_option("--macro", train_macro, "macro overrides");
  train->add_option("--out", train_out, "output directory");
  train->add_option("--seed", train_seed, "initialization and shuffling seed");
  train_data.add(train);
  train_flags.add(train);

  // manifest
  auto* manifest = app.add_subcommand("manifest", "write a run manifest for `search`");
  std::string manifest_out;
  std::string manifest_run_dir;
  std::string manifest_macro;
  std::string manifest_space = format_space(SearchSpace::full());
  int manifest_trials = 50;
  int manifest_top_k = 10;
  std::uint64_t manifest_seed = 0;
  DataFlags manifest_data;
  TrainFlags manifest_flags;
  manifest->add_option("--write", manifest_out, "manifest file to write (default: stdout)");
  manifest->add_option("--out", manifest_run_dir, "run directory recorded in the manifest");
  manifest->add_option("--macro", manifest_macro, "macro overrides");
  manifest->add_option("--space", manifest_space, "search space");
  manifest->add_option("--trials", manifest_trials, "number of trials")->check(CLI::PositiveNumber);
  manifest->add_option("--top-k", manifest_top_k, "ensemble size")->check(CLI::PositiveNumber);
  manifest->add_option("--seed", manifest_seed, "master seed");
  manifest_data.add(manifest);
  manifest_flags.add(manifest);

  // search
  auto* search = app.add_subcommand("search", "run or resume a random search");
  std::string search_manifest;
  std::string search_run_dir;
  bool search_resume = false;
  std::optional<int> search_jobs;
  search->add_option("--manifest", search_manifest, "run manifest file");
  search->add_option("--run-dir", search_run_dir, "run directory (overrides the manifest's)");
  search->add_flag("--resume", search_resume, "continue an interrupted search");
  search->add_option("--jobs", search_jobs, "concurrent trials")->check(CLI::PositiveNumber);

  // ensemble
  auto* ensemble = app.add_subcommand("ensemble", "evaluate the top-k ensemble of a finished search");
  std::string ensemble_run_dir;
  std::optional<int> ensemble_top_k;
  int ensemble_jobs = 1;
  ensemble->add_option("--run-dir", ensemble_run_dir, "run directory")->required();
  ensemble->add_option("--top-k", ensemble_top_k, "members (default: the manifest's top_k)")
      ->check(CLI::PositiveNumber);
  ensemble->add_option("--jobs", ensemble_jobs, "concurrent member evaluations")->check(CLI::PositiveNumber);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "write the building-block component histogram");
  std::string analyze_run_dir;
  std::optional<int> analyze_top_k;
  analyze->add_option("--run-dir", analyze_run_dir, "run directory")->required();
  analyze->add_option("--top-k", analyze_top_k, "top set size (default: the manifest's top_k)")
      ->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "blocknas: " << msg << '\n';
    return usage;
  }

  try {
    if (*sample) {
      const SearchSpace space = parse_space(space_text);
      for (int i = 0; i < sample_count; ++i) {
        BlockConfig b = sample_block(space, sample_seed, static_cast<std::uint64_t>(i));
        out << format_config(sample_canonical ? canonicalize(b) : b) << '\n';
      }
      return ok;
    }

    if (*describe) {
      MacroConfig macro = parse_macro(describe_macro);
      macro.validate();
      const ArchGraph g = build_architecture(parse_config(describe_config), macro);
      out << emit_graph_description(g);
      return ok;
    }

    if (*train) {
      const BlockConfig block = parse_config(train_config);
      const DatasetProfile profile = train_data.profile();
      const MacroConfig macro = macro_for_profile(train_macro, profile);
      TrainConfig tc = train_flags.apply(TrainConfig{});
      tc.augment_crop = profile.augment_crop;
      tc.augment_flip = profile.augment_flip;
      tc.seed = derive_seed(train_seed, 2);
      const DataSplits data = load_profile(profile);
      check_data_matches(macro, data);

      const std::string dir = resolve_output(train_out, "train");
      fs::create_directories(dir);
      ArchGraph graph = build_architecture(block, macro);
      const std::uint64_t params = graph.total_params;
      Network<float> net(std::move(graph), derive_seed(train_seed, 1));
      TrainOptions opts;
      opts.checkpoint_path = (fs::path(dir) / "model.ckpt").string();
      opts.metrics_path = (fs::path(dir) / "metrics.jsonl").string();
      opts.on_epoch = [&err](const EpochMetrics& m) {
        err << "epoch " << m.epoch << " lr=" << fmt("%.5g", m.lr) << " loss=" << fmt("%.4f", m.train_loss)
            << " train_acc=" << fmt("%.4f", m.train_acc) << " val_acc=" << fmt("%.4f", m.val_acc) << '\n';
      };
      const TrainResult result = train_model(net, data, tc, opts);

      nlohmann::json report = {{"config", format_config(block)},
                               {"macro", macro_to_json(macro)},
                               {"dataset", profile_to_json(profile)},
                               {"train", train_config_to_json(tc)},
                               {"params", params},
                               {"best_val_acc", result.best_val_acc},
                               {"best_epoch", result.best_epoch},
                               {"epochs_run", result.history.size()},
                               {"stop_reason", std::string(to_string(result.stop_reason))},
                               {"wall_seconds", result.wall_seconds}};
      if (!result.ok()) {
        report["failure"] = result.failure;
        std::ofstream(fs::path(dir) / "result.json") << report.dump(2) << '\n';
        err << "blocknas: training diverged: " << result.failure << '\n';
        return runtime;
      }
      const EvalResult test =
          evaluate(predict_set(net, data.test, compute_dataset_stats(data.train)).cast<double>(), data.test.labels());
      report["test"] = {{"accuracy", test.accuracy}, {"error_percent", test.error_percent}, {"count", test.count}};
      report["checkpoint"] = "model.ckpt";
      std::ofstream(fs::path(dir) / "result.json") << report.dump(2) << '\n';
      out << "params " << params << '\n'
          << "best_val_acc " << fmt("%.4f", result.best_val_acc) << " at epoch " << result.best_epoch << '\n'
          << "stop " << to_string(result.stop_reason) << " after " << result.history.size() << " epochs\n"
          << "test_error " << fmt("%.2f", test.error_percent) << "%\n"
          << "checkpoint " << opts.checkpoint_path << '\n';
      return ok;
    }

    if (*manifest) {
      RunManifest m;
      m.dataset = manifest_data.profile();
      m.search.trials = manifest_trials;
      m.search.top_k = manifest_top_k;
      m.search.master_seed = manifest_seed;
      m.search.space = parse_space(manifest_space);
      m.search.macro = macro_for_profile(manifest_macro, m.dataset);
      m.search.train = manifest_flags.apply(TrainConfig{});
      m.search.train.augment_crop = m.dataset.augment_crop;
      m.search.train.augment_flip = m.dataset.augment_flip;
      m.output_dir = manifest_run_dir;
      m.validate();
      if (manifest_out.empty()) {
        out << manifest_to_json(m).dump(2) << '\n';
      } else {
        write_manifest(manifest_out, m);
        out << manifest_out << '\n';
      }
      return ok;
    }

    if (*search) {
      LaunchOptions opts;
      opts.jobs = search_jobs;
      opts.on_trial = [&err](const TrialRecord& r) { print_trial(err, r); };
      std::optional<RunManifest> m;
      if (!search_manifest.empty()) m = read_manifest(search_manifest);
      SearchRun run;
      if (search_resume) {
        std::string dir = search_run_dir;
        if (dir.empty() && m) dir = resolve_output(m->output_dir, "search");
        if (dir.empty()) throw ConfigError("--resume needs --run-dir or --manifest");
        run = resume_search(dir, m, opts);
        if (run.resumed_noop) err << "search in " << dir << " is already complete\n";
      } else {
        if (!m) throw ConfigError("search needs --manifest (or --resume --run-dir)");
        m->output_dir =
            resolve_output(search_run_dir.empty() ? m->output_dir : search_run_dir,
                           "search-" + std::to_string(manifest_hash(*m)));
        run = launch_search(*m, opts);
      }
      const std::size_t ok_count =
          static_cast<std::size_t>(std::count_if(run.records.begin(), run.records.end(),
                                                 [](const TrialRecord& r) { return r.ok(); }));
      out << "run_dir " << run.manifest.output_dir << '\n'
          << "trials " << run.records.size() << " ok " << ok_count << '\n'
          << "best_val_acc " << fmt("%.4f", run.curve.empty() ? 0.0 : run.curve.back().best_val_acc) << '\n';
      return ok;
    }

    if (*ensemble) {
      const int k = ensemble_top_k ? *ensemble_top_k : load_run(ensemble_run_dir).manifest.search.top_k;
      const EnsembleReport rep = run_ensemble(ensemble_run_dir, k, ensemble_jobs);
      if (rep.warning) err << "blocknas: warning: " << *rep.warning << '\n';
      for (const auto& mem : rep.spec.members)
        out << "member trial=" << mem.trial_index << " val_acc=" << fmt("%.4f", mem.val_acc) << " " << mem.config
            << '\n';
      out << "members " << rep.spec.members.size() << '\n'
          << "test_error single " << fmt("%.2f", rep.single.error_percent) << "% ensemble "
          << fmt("%.2f", rep.ensemble.error_percent) << "%\n";
      return ok;
    }

    if (*analyze) {
      const ComponentHistogram h = run_analysis(analyze_run_dir, analyze_top_k);
      out << "component,count_all,count_top,expected_top\n";
      for (const auto& b : h.buckets)
        out << b.component << ',' << b.count_all << ',' << b.count_top << ',' << fmt("%.6f", b.expected_top)
            << '\n';
      return ok;
    }
  } catch (const ParseError& e) {
    err << "blocknas: " << e.what() << '\n';
    return usage;
  } catch (const ConfigError& e) {
    err << "blocknas: " << e.what() << '\n';
    return usage;
  } catch (const DataError& e) {
    err << "blocknas: " << e.what() << '\n';
    return data;
  } catch (const std::exception& e) {
    err << "blocknas: " << e.what() << '\n';
    return runtime;
  }
  return usage;
}

}  // namespace blocknas::cli
