#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sconf/conformal.hpp"
#include "sconf/errors.hpp"
#include "sconf/pipelines.hpp"
#include "sconf/synth.hpp"
#include "sconf/transduction.hpp"
#include "sconf/version.hpp"

namespace sconf {

// Run configuration: one JSON document describes a whole experiment. Parsing
// is strict in both directions: a missing required field and an unknown key
// are both errors that name the offending field, so a typo can never
// silently fall back to a default.

struct DataFiles {
  std::string calibration_pool;
  std::string test_pool;
  std::string classifier;
};

struct SweepConfig {
  std::vector<int> per_class_values;  // sweep over the per-class budget
  std::vector<int> batch_values;      // or over the test batch size
};

struct RunConfig {
  int version = 1;
  std::optional<SynthSpec> synth;  // exactly one of synth / files
  int synth_n_test = 0;            // extra held-out rows when synth drives a run
  std::optional<DataFiles> files;
  std::vector<StrategyConfig> strategies;
  int per_class = 16;  // "K" in the config document
  std::vector<double> alphas{0.1, 0.05};
  int n_trials = 100;
  std::uint64_t base_seed = 0;
  std::optional<SweepConfig> sweep;
  std::string output_dir = "out";
};

inline ScoreKind parse_score_kind(const std::string& name) {
  if (name == "LAC") return ScoreKind::Lac;
  if (name == "APS") return ScoreKind::Aps;
  if (name == "RAPS") return ScoreKind::Raps;
  throw ConfigError("unknown scorer kind \"" + name + "\" (expected LAC, APS, or RAPS)");
}

inline Objective parse_objective(const std::string& name) {
  if (name == "TIM") return Objective::Tim;
  if (name == "KL_PRIOR") return Objective::KlPrior;
  throw ConfigError("unknown objective \"" + name + "\" (expected TIM or KL_PRIOR)");
}

inline LrSchedule parse_schedule(const std::string& name) {
  if (name == "COSINE") return LrSchedule::Cosine;
  throw ConfigError("unknown schedule \"" + name + "\" (expected COSINE)");
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) { known = true; break; }
    if (!known)
      throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
  }
}

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                           const std::string& where) {
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError("missing required field \"" + std::string(key) + "\" in " + where);
  return *it;
}

inline std::string field_path(const std::string& where, const char* key) {
  return where + "." + key;
}

inline double get_double(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_number())
    throw ConfigError("field \"" + field_path(where, key) + "\" must be a number");
  return j.get<double>();
}

inline int get_int(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_number_integer() && !j.is_number_unsigned())
    throw ConfigError("field \"" + field_path(where, key) + "\" must be an integer");
  auto v = j.get<long long>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError("field \"" + field_path(where, key) + "\" is out of range");
  return static_cast<int>(v);
}

inline std::uint64_t get_u64(const nlohmann::json& j, const char* key,
                             const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0)
    return static_cast<std::uint64_t>(j.get<long long>());
  throw ConfigError("field \"" + field_path(where, key) + "\" must be a nonnegative integer");
}

inline bool get_bool(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_boolean())
    throw ConfigError("field \"" + field_path(where, key) + "\" must be a boolean");
  return j.get<bool>();
}

inline std::string get_string(const nlohmann::json& j, const char* key,
                              const std::string& where) {
  if (!j.is_string())
    throw ConfigError("field \"" + field_path(where, key) + "\" must be a string");
  return j.get<std::string>();
}

inline NonconformityScorer parse_scorer(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown_keys(j, {"kind", "randomized", "raps_k_reg", "raps_penalty"}, where);
  NonconformityScorer s;
  s.kind = parse_score_kind(get_string(require_field(j, "kind", where), "kind", where));
  if (j.contains("randomized")) s.randomized = get_bool(j["randomized"], "randomized", where);
  if (j.contains("raps_k_reg")) s.raps_k_reg = get_int(j["raps_k_reg"], "raps_k_reg", where);
  if (j.contains("raps_penalty"))
    s.raps_penalty = get_double(j["raps_penalty"], "raps_penalty", where);
  return s;
}

inline SolverConfig parse_solver(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown_keys(j,
                      {"objective", "lambda", "iterations", "base_lr", "schedule",
                       "adam_beta1", "adam_beta2", "adam_eps"},
                      where);
  SolverConfig s;
  if (j.contains("objective"))
    s.objective = parse_objective(get_string(j["objective"], "objective", where));
  if (j.contains("lambda")) s.lambda = get_double(j["lambda"], "lambda", where);
  if (j.contains("iterations")) s.iterations = get_int(j["iterations"], "iterations", where);
  if (j.contains("base_lr")) s.base_lr = get_double(j["base_lr"], "base_lr", where);
  if (j.contains("schedule"))
    s.schedule = parse_schedule(get_string(j["schedule"], "schedule", where));
  if (j.contains("adam_beta1")) s.adam_beta1 = get_double(j["adam_beta1"], "adam_beta1", where);
  if (j.contains("adam_beta2")) s.adam_beta2 = get_double(j["adam_beta2"], "adam_beta2", where);
  if (j.contains("adam_eps")) s.adam_eps = get_double(j["adam_eps"], "adam_eps", where);
  return s;
}

inline ProbeConfig parse_probe(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown_keys(
      j, {"iterations", "base_lr", "schedule", "adam_beta1", "adam_beta2", "adam_eps"},
      where);
  ProbeConfig p;
  if (j.contains("iterations")) p.iterations = get_int(j["iterations"], "iterations", where);
  if (j.contains("base_lr")) p.base_lr = get_double(j["base_lr"], "base_lr", where);
  if (j.contains("schedule"))
    p.schedule = parse_schedule(get_string(j["schedule"], "schedule", where));
  if (j.contains("adam_beta1")) p.adam_beta1 = get_double(j["adam_beta1"], "adam_beta1", where);
  if (j.contains("adam_beta2")) p.adam_beta2 = get_double(j["adam_beta2"], "adam_beta2", where);
  if (j.contains("adam_eps")) p.adam_eps = get_double(j["adam_eps"], "adam_eps", where);
  return p;
}

inline StrategyConfig parse_strategy_entry(const nlohmann::json& j, std::size_t index) {
  const std::string where = "strategies[" + std::to_string(index) + "]";
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown_keys(j, {"strategy", "scorer", "solver", "probe"}, where);
  StrategyConfig cfg;
  cfg.strategy =
      parse_strategy(get_string(require_field(j, "strategy", where), "strategy", where));
  cfg.scorer = parse_scorer(require_field(j, "scorer", where), where + ".scorer");
  if (j.contains("solver")) cfg.solver = parse_solver(j["solver"], where + ".solver");
  if (j.contains("probe")) cfg.probe = parse_probe(j["probe"], where + ".probe");
  return cfg;
}

}  // namespace detail

// Parses a synthetic-data spec. `seed` is always required; n_test is the
// optional count of extra rows reserved as the test pool.
inline SynthSpec parse_synth_spec(const nlohmann::json& j, int* n_test_out,
                                  const std::string& where = "synth") {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  detail::reject_unknown_keys(j,
                              {"num_classes", "dim", "concentration", "class_marginal",
                               "n_samples", "n_test", "prototype_perturbation",
                               "temperature", "seed"},
                              where);
  SynthSpec spec;
  spec.num_classes =
      detail::get_int(detail::require_field(j, "num_classes", where), "num_classes", where);
  spec.dim = detail::get_int(detail::require_field(j, "dim", where), "dim", where);
  spec.n_samples =
      detail::get_int(detail::require_field(j, "n_samples", where), "n_samples", where);
  spec.seed = detail::get_u64(detail::require_field(j, "seed", where), "seed", where);
  if (j.contains("concentration"))
    spec.concentration = detail::get_double(j["concentration"], "concentration", where);
  if (j.contains("prototype_perturbation"))
    spec.prototype_perturbation =
        detail::get_double(j["prototype_perturbation"], "prototype_perturbation", where);
  if (j.contains("temperature"))
    spec.temperature = detail::get_double(j["temperature"], "temperature", where);
  if (j.contains("class_marginal")) {
    const auto& m = j["class_marginal"];
    if (!m.is_array())
      throw ConfigError("field \"" + where + ".class_marginal\" must be an array");
    LabelMarginal marginal;
    for (const auto& v : m)
      marginal.probs.push_back(detail::get_double(v, "class_marginal", where));
    spec.class_marginal = marginal;
  }
  int n_test = 0;
  if (j.contains("n_test")) n_test = detail::get_int(j["n_test"], "n_test", where);
  if (n_test < 0) throw ConfigError("field \"" + where + ".n_test\" must be >= 0");
  if (n_test_out) *n_test_out = n_test;
  return spec;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  detail::reject_unknown_keys(j,
                              {"version", "data", "strategies", "K", "alphas", "n_trials",
                               "base_seed", "sweep", "output_dir"},
                              "config");
  RunConfig cfg;
  cfg.version = detail::get_int(detail::require_field(j, "version", "config"), "version",
                                "config");
  if (cfg.version != 1)
    throw ConfigError("unsupported config version " + std::to_string(cfg.version) +
                      " (this tool reads version 1)");

  const auto& data = detail::require_field(j, "data", "config");
  if (!data.is_object()) throw ConfigError("config.data must be an object");
  detail::reject_unknown_keys(data, {"synth", "files"}, "config.data");
  const bool has_synth = data.contains("synth");
  const bool has_files = data.contains("files");
  if (has_synth == has_files)
    throw ConfigError("config.data must contain exactly one of \"synth\" or \"files\"");
  if (has_synth) {
    cfg.synth = parse_synth_spec(data["synth"], &cfg.synth_n_test, "config.data.synth");
  } else {
    const auto& f = data["files"];
    if (!f.is_object()) throw ConfigError("config.data.files must be an object");
    detail::reject_unknown_keys(f, {"calibration_pool", "test_pool", "classifier"},
                                "config.data.files");
    DataFiles df;
    df.calibration_pool =
        detail::get_string(detail::require_field(f, "calibration_pool", "config.data.files"),
                           "calibration_pool", "config.data.files");
    df.test_pool = detail::get_string(
        detail::require_field(f, "test_pool", "config.data.files"), "test_pool",
        "config.data.files");
    df.classifier = detail::get_string(
        detail::require_field(f, "classifier", "config.data.files"), "classifier",
        "config.data.files");
    cfg.files = df;
  }

  const auto& strategies = detail::require_field(j, "strategies", "config");
  if (!strategies.is_array() || strategies.empty())
    throw ConfigError("config.strategies must be a nonempty array");
  for (std::size_t i = 0; i < strategies.size(); ++i)
    cfg.strategies.push_back(detail::parse_strategy_entry(strategies[i], i));

  if (j.contains("K")) cfg.per_class = detail::get_int(j["K"], "K", "config");
  if (cfg.per_class < 1) throw ConfigError("config.K must be >= 1");
  if (j.contains("alphas")) {
    const auto& a = j["alphas"];
    if (!a.is_array() || a.empty())
      throw ConfigError("config.alphas must be a nonempty array");
    cfg.alphas.clear();
    for (const auto& v : a) cfg.alphas.push_back(detail::get_double(v, "alphas", "config"));
  }
  if (j.contains("n_trials")) cfg.n_trials = detail::get_int(j["n_trials"], "n_trials", "config");
  if (cfg.n_trials < 1) throw ConfigError("config.n_trials must be >= 1");
  if (j.contains("base_seed"))
    cfg.base_seed = detail::get_u64(j["base_seed"], "base_seed", "config");
  if (j.contains("output_dir"))
    cfg.output_dir = detail::get_string(j["output_dir"], "output_dir", "config");

  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    if (!s.is_object()) throw ConfigError("config.sweep must be an object");
    detail::reject_unknown_keys(s, {"K", "test_batch_size"}, "config.sweep");
    const bool has_k = s.contains("K");
    const bool has_b = s.contains("test_batch_size");
    if (has_k == has_b)
      throw ConfigError(
          "config.sweep must contain exactly one of \"K\" or \"test_batch_size\"");
    SweepConfig sw;
    const auto& arr = has_k ? s["K"] : s["test_batch_size"];
    const char* key = has_k ? "K" : "test_batch_size";
    if (!arr.is_array() || arr.empty())
      throw ConfigError("config.sweep." + std::string(key) + " must be a nonempty array");
    for (const auto& v : arr) {
      int val = detail::get_int(v, key, "config.sweep");
      if (val < 1)
        throw ConfigError("config.sweep." + std::string(key) + " entries must be >= 1");
      (has_k ? sw.per_class_values : sw.batch_values).push_back(val);
    }
    cfg.sweep = sw;
  }
  return cfg;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

inline RunConfig parse_run_config_file(const std::string& path) {
  return parse_run_config(read_json_file(path));
}

namespace detail {

inline nlohmann::json scorer_to_json(const NonconformityScorer& s) {
  return {{"kind", to_string(s.kind)},
          {"randomized", s.randomized},
          {"raps_k_reg", s.raps_k_reg},
          {"raps_penalty", s.raps_penalty}};
}

inline nlohmann::json solver_to_json(const SolverConfig& s) {
  return {{"objective", to_string(s.objective)}, {"lambda", s.lambda},
          {"iterations", s.iterations},          {"base_lr", s.base_lr},
          {"schedule", "COSINE"},                {"adam_beta1", s.adam_beta1},
          {"adam_beta2", s.adam_beta2},          {"adam_eps", s.adam_eps}};
}

inline nlohmann::json probe_to_json(const ProbeConfig& p) {
  return {{"iterations", p.iterations},   {"base_lr", p.base_lr},
          {"schedule", "COSINE"},         {"adam_beta1", p.adam_beta1},
          {"adam_beta2", p.adam_beta2},   {"adam_eps", p.adam_eps}};
}

inline nlohmann::json synth_to_json(const SynthSpec& spec, int n_test) {
  nlohmann::json j{{"num_classes", spec.num_classes},
                   {"dim", spec.dim},
                   {"concentration", spec.concentration},
                   {"n_samples", spec.n_samples},
                   {"n_test", n_test},
                   {"prototype_perturbation", spec.prototype_perturbation},
                   {"temperature", spec.temperature},
                   {"seed", spec.seed}};
  if (!spec.class_marginal.probs.empty()) j["class_marginal"] = spec.class_marginal.probs;
  return j;
}

}  // namespace detail

// The config with every default materialized; embedded verbatim in reports.
inline nlohmann::json resolved_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["version"] = cfg.version;
  if (cfg.synth) {
    j["data"] = {{"synth", detail::synth_to_json(*cfg.synth, cfg.synth_n_test)}};
  } else if (cfg.files) {
    j["data"] = {{"files",
                  {{"calibration_pool", cfg.files->calibration_pool},
                   {"test_pool", cfg.files->test_pool},
                   {"classifier", cfg.files->classifier}}}};
  }
  nlohmann::json strategies = nlohmann::json::array();
  for (const StrategyConfig& s : cfg.strategies) {
    nlohmann::json entry;
    entry["strategy"] = to_string(s.strategy);
    entry["scorer"] = detail::scorer_to_json(s.scorer);
    if (s.strategy == StrategyKind::ScaT || s.strategy == StrategyKind::ScaTTim)
      entry["solver"] = detail::solver_to_json(s.solver);
    if (s.strategy == StrategyKind::AdaptScp) entry["probe"] = detail::probe_to_json(s.probe);
    strategies.push_back(entry);
  }
  j["strategies"] = strategies;
  j["K"] = cfg.per_class;
  j["alphas"] = cfg.alphas;
  j["n_trials"] = cfg.n_trials;
  j["base_seed"] = cfg.base_seed;
  if (cfg.sweep) {
    if (!cfg.sweep->per_class_values.empty())
      j["sweep"] = {{"K", cfg.sweep->per_class_values}};
    else
      j["sweep"] = {{"test_batch_size", cfg.sweep->batch_values}};
  }
  j["output_dir"] = cfg.output_dir;
  return j;
}

}  // namespace sconf
