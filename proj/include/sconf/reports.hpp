#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sconf/errors.hpp"
#include "sconf/evaluation.hpp"
#include "sconf/version.hpp"

namespace sconf {

// Report writers. The CSV files hold only values that are reproducible bit
// for bit across reruns; wall-clock and memory figures live in the JSON
// aggregate alone.

// Shortest decimal string that parses back to exactly v.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string scorer_label(ScoreKind kind, bool randomized) {
  std::string s = to_string(kind);
  if (randomized && kind != ScoreKind::Lac) s += "_RAND";
  return s;
}

namespace detail {

inline void write_provenance(std::ostream& os, const nlohmann::json& config) {
  os << "# sconf-version: " << kToolVersion << "\n";
  os << "# config: " << config.dump() << "\n";
}

inline std::string cell_column_name(std::size_t cell, const TrialReport& rep) {
  return "s" + std::to_string(cell) + "_" + to_string(rep.strategy) + "_" +
         scorer_label(rep.scorer, rep.randomized) + "_a" + format_double(rep.alpha);
}

}  // namespace detail

// One row per (trial, strategy, alpha) cell, trial-major.
inline void write_trials_csv(std::ostream& os, const RunResult& result,
                             const nlohmann::json& config) {
  detail::write_provenance(os, config);
  os << "trial,seed,strategy,scorer,alpha,coverage,mean_set_size,ccv,aca\n";
  for (const TrialReport& r : result.trials) {
    os << r.trial << ',' << r.seed << ',' << to_string(r.strategy) << ','
       << scorer_label(r.scorer, r.randomized) << ',' << format_double(r.alpha) << ','
       << format_double(r.coverage) << ',' << format_double(r.mean_set_size) << ','
       << format_double(r.ccv) << ',' << format_double(r.aca) << '\n';
  }
}

// Wide layout: one row per trial, one coverage column per strategy/alpha cell.
inline void write_coverage_by_trial_csv(std::ostream& os, const RunResult& result,
                                        const nlohmann::json& config) {
  detail::write_provenance(os, config);
  if (result.trials.empty() || result.aggregate.n_trials < 1)
    throw DataError("no trials to report");
  const std::size_t n_cells =
      result.trials.size() / static_cast<std::size_t>(result.aggregate.n_trials);
  os << "trial,seed";
  for (std::size_t c = 0; c < n_cells; ++c)
    os << ',' << detail::cell_column_name(c, result.trials[c]);
  os << '\n';
  for (int t = 0; t < result.aggregate.n_trials; ++t) {
    const std::size_t base = static_cast<std::size_t>(t) * n_cells;
    os << result.trials[base].trial << ',' << result.trials[base].seed;
    for (std::size_t c = 0; c < n_cells; ++c)
      os << ',' << format_double(result.trials[base + c].coverage);
    os << '\n';
  }
}

inline nlohmann::json aggregate_to_json(const AggregateReport& agg,
                                        const nlohmann::json& config) {
  nlohmann::json j;
  j["format_version"] = kReportFormatVersion;
  j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  j["config"] = config;
  j["n_trials"] = agg.n_trials;
  j["peak_mem_note"] = agg.peak_mem_note;
  nlohmann::json rows = nlohmann::json::array();
  for (const SummaryRow& r : agg.rows) {
    rows.push_back({{"strategy", to_string(r.strategy)},
                    {"scorer", scorer_label(r.scorer, r.randomized)},
                    {"alpha", r.alpha},
                    {"coverage_mean", r.coverage_mean},
                    {"coverage_std", r.coverage_std},
                    {"mean_set_size_mean", r.size_mean},
                    {"mean_set_size_std", r.size_std},
                    {"ccv_mean", r.ccv_mean},
                    {"ccv_std", r.ccv_std},
                    {"aca_mean", r.aca_mean},
                    {"aca_std", r.aca_std},
                    {"timing_s_mean", r.timing_s_mean}});
  }
  j["results"] = rows;
  return j;
}

inline void write_aggregate_json(std::ostream& os, const AggregateReport& agg,
                                 const nlohmann::json& config) {
  os << aggregate_to_json(agg, config).dump(2) << '\n';
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string mean_pm_std(double mean, double sd, int digits) {
  return fixed(mean, digits) + " +/- " + fixed(sd, digits);
}

}  // namespace detail

// Fixed-width text table from a parsed aggregate report.
inline std::string render_aggregate_table(const nlohmann::json& aggregate) {
  if (!aggregate.contains("results") || !aggregate["results"].is_array())
    throw DataError("aggregate report has no results array");
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"strategy", "scorer", "alpha", "coverage", "set_size", "ccv", "aca",
                  "time_s"});
  for (const auto& r : aggregate["results"]) {
    rows.push_back({r.at("strategy").get<std::string>(), r.at("scorer").get<std::string>(),
                    detail::fixed(r.at("alpha").get<double>(), 3),
                    detail::mean_pm_std(r.at("coverage_mean").get<double>(),
                                        r.at("coverage_std").get<double>(), 4),
                    detail::mean_pm_std(r.at("mean_set_size_mean").get<double>(),
                                        r.at("mean_set_size_std").get<double>(), 3),
                    detail::mean_pm_std(r.at("ccv_mean").get<double>(),
                                        r.at("ccv_std").get<double>(), 2),
                    detail::mean_pm_std(r.at("aca_mean").get<double>(),
                                        r.at("aca_std").get<double>(), 2),
                    detail::fixed(r.at("timing_s_mean").get<double>(), 4)});
  }
  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  std::string out;
  if (aggregate.contains("n_trials"))
    out += "trials: " + std::to_string(aggregate.at("n_trials").get<int>()) + "\n";
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    std::string line;
    for (std::size_t i = 0; i < rows[ri].size(); ++i) {
      std::string cell = rows[ri][i];
      cell.resize(widths[i], ' ');
      line += cell;
      if (i + 1 < rows[ri].size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (ri == 0) out += std::string(line.size(), '-') + "\n";
  }
  return out;
}

}  // namespace sconf
