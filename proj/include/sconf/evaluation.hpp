#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/pipelines.hpp"
#include "sconf/rng.hpp"

namespace sconf {

// Repeated-trial evaluation: stratified calibration draws, per-trial metrics,
// and aggregation across trials. Every random choice is keyed off the trial
// seed, so results are identical for any thread count.

// Integer quotas that sum to `total`, proportional to `marginal`. Each class
// gets the floor of its exact share; leftover units go to the largest
// fractional parts, ties broken toward lower class index.
inline std::vector<std::size_t> largest_remainder_quotas(std::size_t total,
                                                         const LabelMarginal& marginal) {
  validate_marginal(marginal);
  const std::size_t c = marginal.probs.size();
  double mass = 0.0;
  for (double p : marginal.probs) mass += p;
  std::vector<std::size_t> quotas(c, 0);
  std::vector<double> frac(c, 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < c; ++i) {
    double exact = static_cast<double>(total) * (marginal.probs[i] / mass);
    double fl = std::floor(exact);
    quotas[i] = static_cast<std::size_t>(fl);
    frac[i] = exact - fl;
    assigned += quotas[i];
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) quotas[order[i]] += 1;
  return quotas;
}

struct CalibrationSample {
  EmbeddingSet calibration;             // rows in ascending pool order
  EmbeddingSet remainder;               // pool rows not drawn, ascending
  std::vector<std::size_t> cal_indices; // into the pool
};

namespace detail {

inline EmbeddingSet take_rows(const EmbeddingSet& set, std::span<const std::size_t> idx) {
  EmbeddingSet out;
  out.features = gather_rows(set.features, idx);
  if (set.has_labels()) {
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(set.labels[i]);
  }
  out.num_classes = set.num_classes;
  out.renormalized = set.renormalized;
  return out;
}

}  // namespace detail

// Draws a stratified calibration set of per_class * num_classes rows whose
// class counts follow the pool's empirical marginal (largest-remainder
// rounding). Within a class the rows are chosen uniformly without
// replacement.
inline CalibrationSample sample_calibration(const EmbeddingSet& pool, int per_class,
                                            std::uint64_t seed) {
  if (per_class < 1) throw ConfigError("per-class calibration budget must be >= 1");
  if (!pool.has_labels()) throw DataError("calibration pool must be labeled");
  if (pool.num_classes < 2) throw DataError("calibration pool needs at least two classes");
  const auto c = static_cast<std::size_t>(pool.num_classes);
  LabelMarginal marginal = empirical_marginal(pool.labels, pool.num_classes);
  std::vector<std::size_t> quotas =
      largest_remainder_quotas(c * static_cast<std::size_t>(per_class), marginal);

  std::vector<std::vector<std::size_t>> by_class(c);
  for (std::size_t i = 0; i < pool.size(); ++i)
    by_class[static_cast<std::size_t>(pool.labels[i])].push_back(i);

  Rng rng(seed);
  std::vector<char> taken(pool.size(), 0);
  for (std::size_t cl = 0; cl < c; ++cl) {
    auto& ids = by_class[cl];
    if (ids.size() < quotas[cl])
      throw DataError("class " + std::to_string(cl) + " has " + std::to_string(ids.size()) +
                      " pool rows but the calibration quota is " + std::to_string(quotas[cl]));
    rng.shuffle(ids);
    for (std::size_t k = 0; k < quotas[cl]; ++k) taken[ids[k]] = 1;
  }

  CalibrationSample out;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < pool.size(); ++i)
    (taken[i] ? out.cal_indices : rest).push_back(i);
  out.calibration = detail::take_rows(pool, out.cal_indices);
  out.remainder = detail::take_rows(pool, rest);
  return out;
}

// ---- metrics ----------------------------------------------------------

namespace detail {

inline void check_metric_sizes(std::size_t n_sets, std::size_t n_labels) {
  if (n_sets == 0) throw DataError("no prediction sets to evaluate");
  if (n_sets != n_labels) throw DataError("prediction set / label count mismatch");
}

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline std::vector<std::size_t> class_counts(std::span<const std::int32_t> labels,
                                             std::int32_t num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto y = labels[i];
    if (y < 0 || y >= num_classes)
      throw DataError("label " + std::to_string(y) + " at row " + std::to_string(i) +
                      " is outside [0, " + std::to_string(num_classes) + ")");
    counts[static_cast<std::size_t>(y)] += 1;
  }
  return counts;
}

}  // namespace detail

// Fraction of rows whose prediction set contains the true label.
inline double coverage(const std::vector<PredictionSet>& sets,
                       std::span<const std::int32_t> labels) {
  detail::check_metric_sizes(sets.size(), labels.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < sets.size(); ++i)
    if (sets[i].contains(labels[i])) ++hit;
  return static_cast<double>(hit) / static_cast<double>(sets.size());
}

inline double mean_set_size(const std::vector<PredictionSet>& sets) {
  if (sets.empty()) throw DataError("no prediction sets to evaluate");
  std::size_t total = 0;
  for (const auto& s : sets) total += s.size();
  return static_cast<double>(total) / static_cast<double>(sets.size());
}

// Mean absolute gap, in percentage points, between per-class coverage and the
// nominal level. Classes absent from `labels` are excluded from the mean.
inline double class_conditional_coverage_violation(const std::vector<PredictionSet>& sets,
                                                   std::span<const std::int32_t> labels,
                                                   std::int32_t num_classes, double alpha) {
  detail::check_metric_sizes(sets.size(), labels.size());
  auto counts = detail::class_counts(labels, num_classes);
  std::vector<std::size_t> hits(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < sets.size(); ++i)
    if (sets[i].contains(labels[i])) hits[static_cast<std::size_t>(labels[i])] += 1;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t cl = 0; cl < counts.size(); ++cl) {
    if (counts[cl] == 0) continue;
    double cov = static_cast<double>(hits[cl]) / static_cast<double>(counts[cl]);
    sum += std::abs(cov - (1.0 - alpha));
    ++present;
  }
  if (present == 0) throw DataError("no class present in the test labels");
  return 100.0 * sum / static_cast<double>(present);
}

// Macro-averaged top-1 accuracy in percent; ties in a probability row go to
// the lowest class index, and test-absent classes are excluded.
inline double average_class_accuracy(const Matrix& probs, std::span<const std::int32_t> labels,
                                     std::int32_t num_classes) {
  detail::check_metric_sizes(probs.rows(), labels.size());
  if (probs.cols() != static_cast<std::size_t>(num_classes))
    throw DataError("probability columns do not match the class count");
  auto counts = detail::class_counts(labels, num_classes);
  std::vector<std::size_t> hits(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < probs.rows(); ++i)
    if (detail::argmax_row(probs.row(i)) == static_cast<std::size_t>(labels[i]))
      hits[static_cast<std::size_t>(labels[i])] += 1;
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t cl = 0; cl < counts.size(); ++cl) {
    if (counts[cl] == 0) continue;
    sum += static_cast<double>(hits[cl]) / static_cast<double>(counts[cl]);
    ++present;
  }
  if (present == 0) throw DataError("no class present in the test labels");
  return 100.0 * sum / static_cast<double>(present);
}

// ---- repeated trials --------------------------------------------------

struct TrialReport {
  int trial = 0;
  std::uint64_t seed = 0;
  StrategyKind strategy = StrategyKind::Scp;
  ScoreKind scorer = ScoreKind::Lac;
  bool randomized = false;
  double alpha = 0.1;
  double coverage = 0.0;
  double mean_set_size = 0.0;
  double ccv = 0.0;
  double aca = 0.0;
  double timing_s = 0.0;  // wall clock; reported only in aggregate form
};

struct SummaryRow {
  StrategyKind strategy = StrategyKind::Scp;
  ScoreKind scorer = ScoreKind::Lac;
  bool randomized = false;
  double alpha = 0.1;
  double coverage_mean = 0.0, coverage_std = 0.0;
  double size_mean = 0.0, size_std = 0.0;
  double ccv_mean = 0.0, ccv_std = 0.0;
  double aca_mean = 0.0, aca_std = 0.0;
  double timing_s_mean = 0.0;
};

struct AggregateReport {
  int n_trials = 0;
  std::vector<SummaryRow> rows;  // strategy-major, then alpha, in config order
  std::string peak_mem_note;
};

struct RunResult {
  AggregateReport aggregate;
  std::vector<TrialReport> trials;  // trial-major, then strategy, then alpha
};

namespace detail {

// High-water resident set size from the kernel's own accounting.
inline std::string read_peak_memory_note() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) != 0) continue;
    std::size_t pos = 6;
    while (pos < line.size() && !(line[pos] >= '0' && line[pos] <= '9')) ++pos;
    std::size_t end = pos;
    while (end < line.size() && line[end] >= '0' && line[end] <= '9') ++end;
    if (pos < end) return "peak_rss_kb=" + line.substr(pos, end - pos);
    break;
  }
  return "unavailable";
}

// Runs one strategy/alpha cell; with a positive batch size the test rows are
// processed as consecutive independent batches, each a full pipeline run
// (the transductive strategies refit per batch).
inline PipelineResult run_cell(const StrategyConfig& cfg, const PrototypeClassifier& clf,
                               const EmbeddingSet& cal, const EmbeddingSet& test,
                               std::uint64_t seed, std::size_t batch_size) {
  if (batch_size == 0 || batch_size >= test.size())
    return run_strategy(cfg, clf, cal, test, seed);
  PipelineResult joined;
  joined.probs_test = Matrix(test.size(), clf.num_classes());
  joined.sets.reserve(test.size());
  std::size_t batch_index = 0;
  for (std::size_t lo = 0; lo < test.size(); lo += batch_size, ++batch_index) {
    std::size_t hi = std::min(lo + batch_size, test.size());
    EmbeddingSet part = slice_rows(test, lo, hi);
    PipelineResult r =
        run_strategy(cfg, clf, cal, part, mix_seed(seed, 1 + batch_index));
    for (auto& s : r.sets) joined.sets.push_back(std::move(s));
    for (std::size_t i = 0; i < r.probs_test.rows(); ++i)
      for (std::size_t j = 0; j < r.probs_test.cols(); ++j)
        joined.probs_test(lo + i, j) = r.probs_test(i, j);
    if (batch_index == 0) {
      joined.predictor = r.predictor;
      joined.trace = std::move(r.trace);
    }
  }
  return joined;
}

inline double population_std(const std::vector<double>& xs, double mean) {
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace detail

// Runs every strategy at every alpha over n_trials independent calibration
// draws from cal_pool, always predicting on the full test pool. Trial t uses
// seed base_seed + t for both the calibration draw and the pipeline's
// randomized-score stream, so any two runs with the same inputs agree
// bit for bit.
inline RunResult run_trials(const PrototypeClassifier& clf, const EmbeddingSet& cal_pool,
                            const EmbeddingSet& test_pool,
                            const std::vector<StrategyConfig>& strategies, int per_class,
                            const std::vector<double>& alphas, int n_trials,
                            std::uint64_t base_seed, int n_threads = 1,
                            std::size_t test_batch_size = 0) {
  if (strategies.empty()) throw ConfigError("no strategies configured");
  if (alphas.empty()) throw ConfigError("no alpha levels configured");
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (n_threads < 1) throw ConfigError("thread count must be >= 1");
  if (!test_pool.has_labels()) throw DataError("test pool must be labeled for evaluation");
  if (test_pool.size() == 0) throw DataError("test pool is empty");
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha must lie in (0, 1)");

  const EmbeddingSet test_features = test_pool.without_labels();
  const std::size_t n_cells = strategies.size() * alphas.size();
  RunResult out;
  out.trials.resize(static_cast<std::size_t>(n_trials) * n_cells);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto run_one_trial = [&](std::size_t t) {
    const std::uint64_t seed = base_seed + t;
    CalibrationSample draw = sample_calibration(cal_pool, per_class, seed);
    for (std::size_t s = 0; s < strategies.size(); ++s) {
      for (std::size_t a = 0; a < alphas.size(); ++a) {
        StrategyConfig cfg = strategies[s];
        cfg.alpha = alphas[a];
        const std::string ctx = "trial " + std::to_string(t) + ", strategy " +
                                to_string(cfg.strategy) + ", alpha " +
                                std::to_string(cfg.alpha) + ": ";
        auto t0 = std::chrono::steady_clock::now();
        PipelineResult r;
        try {
          r = detail::run_cell(cfg, clf, draw.calibration, test_features, seed,
                               test_batch_size);
        } catch (const ConfigError& e) {
          throw ConfigError(ctx + e.what());
        } catch (const DataError& e) {
          throw DataError(ctx + e.what());
        } catch (const NumericError& e) {
          throw NumericError(ctx + e.what());
        }
        auto t1 = std::chrono::steady_clock::now();
        TrialReport& rep = out.trials[t * n_cells + s * alphas.size() + a];
        rep.trial = static_cast<int>(t);
        rep.seed = seed;
        rep.strategy = cfg.strategy;
        rep.scorer = cfg.scorer.kind;
        rep.randomized = cfg.scorer.randomized;
        rep.alpha = cfg.alpha;
        rep.coverage = coverage(r.sets, test_pool.labels);
        rep.mean_set_size = mean_set_size(r.sets);
        rep.ccv = class_conditional_coverage_violation(r.sets, test_pool.labels,
                                                       test_pool.num_classes, cfg.alpha);
        rep.aca = average_class_accuracy(r.probs_test, test_pool.labels,
                                         test_pool.num_classes);
        rep.timing_s = std::chrono::duration<double>(t1 - t0).count();
      }
    }
  };

  auto worker = [&] {
    while (true) {
      std::size_t t = next.fetch_add(1);
      if (t >= static_cast<std::size_t>(n_trials)) return;
      try {
        run_one_trial(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  out.aggregate.n_trials = n_trials;
  out.aggregate.peak_mem_note = detail::read_peak_memory_note();
  for (std::size_t s = 0; s < strategies.size(); ++s) {
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      std::vector<double> cov, size, ccv, aca, time_s;
      for (int t = 0; t < n_trials; ++t) {
        const TrialReport& rep =
            out.trials[static_cast<std::size_t>(t) * n_cells + s * alphas.size() + a];
        cov.push_back(rep.coverage);
        size.push_back(rep.mean_set_size);
        ccv.push_back(rep.ccv);
        aca.push_back(rep.aca);
        time_s.push_back(rep.timing_s);
      }
      auto mean = [](const std::vector<double>& xs) {
        double m = 0.0;
        for (double x : xs) m += x;
        return m / static_cast<double>(xs.size());
      };
      SummaryRow row;
      row.strategy = strategies[s].strategy;
      row.scorer = strategies[s].scorer.kind;
      row.randomized = strategies[s].scorer.randomized;
      row.alpha = alphas[a];
      row.coverage_mean = mean(cov);
      row.coverage_std = detail::population_std(cov, row.coverage_mean);
      row.size_mean = mean(size);
      row.size_std = detail::population_std(size, row.size_mean);
      row.ccv_mean = mean(ccv);
      row.ccv_std = detail::population_std(ccv, row.ccv_mean);
      row.aca_mean = mean(aca);
      row.aca_std = detail::population_std(aca, row.aca_mean);
      row.timing_s_mean = mean(time_s);
      out.aggregate.rows.push_back(row);
    }
  }
  return out;
}

}  // namespace sconf
