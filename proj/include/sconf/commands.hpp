#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sconf/config.hpp"
#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/evaluation.hpp"
#include "sconf/reports.hpp"
#include "sconf/synth.hpp"
#include "sconf/version.hpp"

namespace sconf {

// Command implementations behind the CLI. Report files are written to
// temporary names and renamed into place only once every file of the run has
// been produced, so an interrupted or failed run leaves no partial outputs
// under the final names.

struct CommandOptions {
  std::string out_dir;  // overrides the config's output_dir when nonempty
  int threads = 1;
  bool verbose = false;
};

namespace detail {

struct LoadedData {
  PrototypeClassifier classifier;
  EmbeddingSet cal_pool;
  EmbeddingSet test_pool;
};

inline LoadedData load_run_data(const RunConfig& cfg) {
  LoadedData d;
  if (cfg.synth) {
    if (cfg.synth_n_test < 1)
      throw ConfigError("config.data.synth.n_test must be >= 1 to run trials");
    SynthSpec extended = *cfg.synth;
    extended.n_samples = cfg.synth->n_samples + cfg.synth_n_test;
    SynthTask task = generate(extended);
    auto pool_n = static_cast<std::size_t>(cfg.synth->n_samples);
    d.cal_pool = slice_rows(task.pool, 0, pool_n);
    d.test_pool = slice_rows(task.pool, pool_n, task.pool.size());
    d.classifier = task.zero_shot;
  } else {
    d.cal_pool = load_embeddings(cfg.files->calibration_pool);
    d.test_pool = load_embeddings(cfg.files->test_pool);
    d.classifier = load_classifier(cfg.files->classifier);
    if (!d.cal_pool.has_labels())
      throw DataError("calibration pool " + cfg.files->calibration_pool + " has no labels");
    if (!d.test_pool.has_labels())
      throw DataError("test pool " + cfg.files->test_pool + " has no labels");
    if (d.cal_pool.num_classes != d.test_pool.num_classes)
      throw DataError("calibration and test pools disagree on the class count");
    if (static_cast<std::int32_t>(d.classifier.num_classes()) != d.cal_pool.num_classes)
      throw DataError("classifier " + cfg.files->classifier + " has " +
                      std::to_string(d.classifier.num_classes()) +
                      " prototypes but the pools have " +
                      std::to_string(d.cal_pool.num_classes) + " classes");
  }
  return d;
}

// Writes every report under a temporary name, then renames the whole batch.
class ReportBundle {
 public:
  explicit ReportBundle(const std::filesystem::path& dir) : dir_(dir) {
    std::filesystem::create_directories(dir_);
  }

  ~ReportBundle() {
    for (const auto& entry : pending_) {
      std::error_code ec;
      std::filesystem::remove(entry.first, ec);
    }
  }

  template <typename WriteFn>
  void add(const std::string& name, WriteFn&& write) {
    auto tmp = dir_ / (name + ".tmp");
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + tmp.string());
    write(os);
    os.flush();
    if (!os) throw DataError("failed while writing " + tmp.string());
    os.close();
    pending_.emplace_back(tmp, dir_ / name);
  }

  std::vector<std::filesystem::path> commit() {
    std::vector<std::filesystem::path> finals;
    finals.reserve(pending_.size());
    for (const auto& entry : pending_) {
      std::filesystem::rename(entry.first, entry.second);
      finals.push_back(entry.second);
    }
    pending_.clear();
    return finals;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pending_;
};

inline RunResult run_and_write(const RunConfig& cfg, const nlohmann::json& embedded_config,
                               const std::filesystem::path& out_dir, int threads,
                               std::size_t test_batch_size, bool verbose,
                               std::ostream& log) {
  LoadedData data = load_run_data(cfg);
  RunResult result =
      run_trials(data.classifier, data.cal_pool, data.test_pool, cfg.strategies,
                 cfg.per_class, cfg.alphas, cfg.n_trials, cfg.base_seed, threads,
                 test_batch_size);
  ReportBundle bundle(out_dir);
  bundle.add("trials.csv",
             [&](std::ostream& os) { write_trials_csv(os, result, embedded_config); });
  bundle.add("aggregate.json", [&](std::ostream& os) {
    write_aggregate_json(os, result.aggregate, embedded_config);
  });
  bundle.add("coverage_by_trial.csv", [&](std::ostream& os) {
    write_coverage_by_trial_csv(os, result, embedded_config);
  });
  for (const auto& p : bundle.commit()) log << "wrote " << p.string() << "\n";
  if (verbose) log << render_aggregate_table(aggregate_to_json(result.aggregate, embedded_config));
  return result;
}

}  // namespace detail

// Generates a synthetic task and writes pool.emb, classifier.emb (+ sidecar)
// and, when the spec reserves test rows, test.emb.
inline void cmd_synth(const std::string& spec_path, const CommandOptions& opt = {},
                      std::ostream& log = std::cout) {
  int n_test = 0;
  SynthSpec spec = parse_synth_spec(read_json_file(spec_path), &n_test, "spec");
  SynthSpec extended = spec;
  extended.n_samples = spec.n_samples + n_test;
  SynthTask task = generate(extended);

  std::filesystem::path dir = opt.out_dir.empty() ? "." : opt.out_dir;
  std::filesystem::create_directories(dir);
  auto pool_n = static_cast<std::size_t>(spec.n_samples);
  EmbeddingSet pool = slice_rows(task.pool, 0, pool_n);
  save_embeddings(pool, (dir / "pool.emb").string());
  std::string extra;
  if (n_test > 0) {
    EmbeddingSet test = slice_rows(task.pool, pool_n, task.pool.size());
    save_embeddings(test, (dir / "test.emb").string());
    extra = ", test.emb (" + std::to_string(n_test) + " rows)";
  }
  save_classifier(task.zero_shot, (dir / "classifier.emb").string());
  log << "synth: wrote pool.emb (" << spec.n_samples << " rows, dim " << spec.dim << ", "
      << spec.num_classes << " classes)" << extra << ", classifier.emb to " << dir.string()
      << " [seed " << spec.seed << "]\n";
}

// Runs the configured trials and writes trials.csv, aggregate.json and
// coverage_by_trial.csv into the output directory.
inline RunResult cmd_run(const std::string& config_path, const CommandOptions& opt = {},
                         std::ostream& log = std::cout) {
  RunConfig cfg = parse_run_config_file(config_path);
  if (cfg.sweep)
    throw ConfigError("config has a sweep block; use the sweep command for it");
  std::filesystem::path out_dir = opt.out_dir.empty() ? cfg.output_dir : opt.out_dir;
  return detail::run_and_write(cfg, resolved_config_json(cfg), out_dir, opt.threads, 0,
                               opt.verbose, log);
}

// Repeats the run across the swept parameter; each value gets its own
// subdirectory (K_<v> or batch_<v>) with the full set of report files.
inline void cmd_sweep(const std::string& config_path, const CommandOptions& opt = {},
                      std::ostream& log = std::cout) {
  RunConfig cfg = parse_run_config_file(config_path);
  if (!cfg.sweep) throw ConfigError("config has no sweep block");
  std::filesystem::path out_root = opt.out_dir.empty() ? cfg.output_dir : opt.out_dir;
  const bool sweep_k = !cfg.sweep->per_class_values.empty();
  const std::vector<int>& values =
      sweep_k ? cfg.sweep->per_class_values : cfg.sweep->batch_values;
  for (int v : values) {
    RunConfig sub = cfg;
    std::filesystem::path sub_dir;
    std::size_t batch = 0;
    if (sweep_k) {
      sub.per_class = v;
      sub.sweep.reset();
      sub_dir = out_root / ("K_" + std::to_string(v));
    } else {
      sub.sweep = SweepConfig{{}, {v}};
      batch = static_cast<std::size_t>(v);
      sub_dir = out_root / ("batch_" + std::to_string(v));
    }
    sub.output_dir = sub_dir.string();
    log << "sweep " << (sweep_k ? "K=" : "test_batch_size=") << v << "\n";
    detail::run_and_write(sub, resolved_config_json(sub), sub_dir, opt.threads, batch,
                          opt.verbose, log);
  }
}

// Renders an aggregate.json as a fixed-width text table.
inline std::string cmd_report(const std::string& aggregate_path) {
  nlohmann::json j = read_json_file(aggregate_path);
  return render_aggregate_table(j);
}

}  // namespace sconf
