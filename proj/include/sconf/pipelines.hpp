#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sconf/adam.hpp"
#include "sconf/classifier.hpp"
#include "sconf/conformal.hpp"
#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/transduction.hpp"

namespace sconf {

// End-to-end prediction-set pipelines. All three share the final stage:
// score labeled calibration rows under the final classifier, take the
// conformal quantile, and emit one prediction set per test row.

enum class StrategyKind { Scp, AdaptScp, ScaT, ScaTTim };

inline const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Scp: return "SCP";
    case StrategyKind::AdaptScp: return "ADAPT_SCP";
    case StrategyKind::ScaT: return "SCA_T";
    case StrategyKind::ScaTTim: return "SCA_T_TIM";
  }
  return "?";
}

inline StrategyKind parse_strategy(const std::string& name) {
  if (name == "SCP") return StrategyKind::Scp;
  if (name == "ADAPT_SCP") return StrategyKind::AdaptScp;
  if (name == "SCA_T") return StrategyKind::ScaT;
  if (name == "SCA_T_TIM") return StrategyKind::ScaTTim;
  throw ConfigError("unknown strategy \"" + name +
                    "\" (expected SCP, ADAPT_SCP, SCA_T, or SCA_T_TIM)");
}

// Supervised linear-probe settings for AdaptScp. Mirrors the transductive
// solver's optimizer defaults.
struct ProbeConfig {
  int iterations = 100;
  double base_lr = 0.01;
  LrSchedule schedule = LrSchedule::Cosine;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct StrategyConfig {
  StrategyKind strategy = StrategyKind::Scp;
  NonconformityScorer scorer;
  double alpha = 0.1;
  SolverConfig solver;  // used by ScaT / ScaTTim
  ProbeConfig probe;    // used by AdaptScp
};

struct PipelineResult {
  std::vector<PredictionSet> sets;  // one per test row
  Matrix probs_test;                // final classifier's test probabilities
  ConformalPredictor predictor;
  std::optional<SolverTrace> trace; // ScaT variants only
};

namespace detail {

inline void check_pipeline_inputs(const PrototypeClassifier& clf, const EmbeddingSet& cal,
                                  const EmbeddingSet& test) {
  if (cal.size() == 0) throw DataError("calibration set is empty");
  if (!cal.has_labels()) throw DataError("calibration set must be labeled");
  for (std::size_t i = 0; i < cal.labels.size(); ++i)
    if (cal.labels[i] == kAbsentLabel)
      throw DataError("calibration row " + std::to_string(i) + " has no label");
  if (test.has_labels())
    throw DataError("test set must be unlabeled (strip labels before running)");
  if (cal.dim() != test.dim()) throw DataError("calibration/test dimension mismatch");
  if (clf.dim() != cal.dim()) throw DataError("classifier/data dimension mismatch");
  if (static_cast<std::int32_t>(clf.num_classes()) != cal.num_classes)
    throw DataError("classifier and calibration class counts differ");
  if (!(cal.num_classes >= 2)) throw DataError("need at least two classes");
}

// Derived sub-streams: calibration-row draws and test-row draws must not
// share (row, label) keys.
inline std::uint64_t fit_seed(std::uint64_t seed) { return mix_seed(seed, 1); }
inline std::uint64_t set_seed(std::uint64_t seed) { return mix_seed(seed, 2); }

}  // namespace detail

// Plain split conformal prediction with a fixed classifier.
inline PipelineResult run_scp(const PrototypeClassifier& clf, const EmbeddingSet& cal,
                              const EmbeddingSet& test, const NonconformityScorer& scorer,
                              double alpha, std::uint64_t seed = 0) {
  detail::check_pipeline_inputs(clf, cal, test);
  Matrix probs_cal = predict_proba(clf, cal);
  ConformalPredictor pred =
      fit_conformal(scorer, probs_cal, cal.labels, alpha, detail::fit_seed(seed));
  PipelineResult out;
  out.probs_test = predict_proba(clf, test);
  out.sets = build_sets(pred, out.probs_test, detail::set_seed(seed));
  out.predictor = pred;
  return out;
}

// Cross-entropy linear probe on the labeled calibration rows, starting from
// the given prototypes. Row sums follow the canonical order, so the fit is
// bit-deterministic and permutation invariant like the transductive solver.
inline PrototypeClassifier train_linear_probe(const PrototypeClassifier& init,
                                              const EmbeddingSet& cal, const ProbeConfig& cfg,
                                              std::vector<double>* loss_trace = nullptr) {
  if (cfg.iterations < 1) throw ConfigError("probe iterations must be >= 1");
  if (!(cfg.base_lr > 0.0) || !std::isfinite(cfg.base_lr))
    throw ConfigError("probe base_lr must be > 0");
  const std::size_t n = cal.size();
  const std::size_t c = init.num_classes();
  const std::size_t d = init.dim();
  auto order = detail::canonical_row_order(cal.features);

  PrototypeClassifier clf = init;
  AdamOptimizer adam(c, d, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_tau = 1.0 / clf.temperature;
  for (int t = 0; t < cfg.iterations; ++t) {
    Matrix p = detail::logits(clf, cal.features);
    Matrix logp;
    detail::softmax_rows_inplace(p, &logp);
    double loss = 0.0;  // mean cross-entropy, for the finiteness check
    Matrix grad(c, d);
    for (std::size_t i : order) {
      auto y = static_cast<std::size_t>(cal.labels[i]);
      loss -= logp(i, y) * inv_n;
      auto pr = p.row(i);
      auto xi = cal.features.row(i);
      for (std::size_t j = 0; j < c; ++j) {
        double g = (pr[j] - (j == y ? 1.0 : 0.0)) * inv_n * inv_tau;
        if (g == 0.0) continue;
        auto gw = grad.row(j);
        for (std::size_t k = 0; k < d; ++k) gw[k] += g * xi[k];
      }
    }
    if (!std::isfinite(loss))
      throw NumericError("probe loss became non-finite at iteration " + std::to_string(t));
    if (loss_trace) loss_trace->push_back(loss);
    adam.step(clf.weights, grad, cosine_lr(cfg.base_lr, t, cfg.iterations));
  }
  return clf;
}

// Fits the probe on the calibration rows and then calibrates on those same
// rows. The threshold therefore reflects scores of training data, not fresh
// data; held out it is not, and coverage on genuinely fresh test rows can
// fall below the nominal level. Kept as an explicit baseline.
inline PipelineResult run_adapt_scp(const PrototypeClassifier& clf,
                                    const EmbeddingSet& cal, const EmbeddingSet& test,
                                    const ProbeConfig& probe,
                                    const NonconformityScorer& scorer, double alpha,
                                    std::uint64_t seed = 0) {
  detail::check_pipeline_inputs(clf, cal, test);
  PrototypeClassifier adapted = train_linear_probe(clf, cal, probe);
  return run_scp(adapted, cal, test, scorer, alpha, seed);
}

// Transductive variant: refine prototypes on the pooled calibration + test
// features (labels enter only through the calibration marginal q), then
// calibrate on the calibration rows under the refined classifier. Cal and
// test rows pass through the solver identically, which is what keeps their
// scores exchangeable.
inline PipelineResult run_sca_t(const PrototypeClassifier& clf, const EmbeddingSet& cal,
                                const EmbeddingSet& test, const SolverConfig& solver_cfg,
                                const NonconformityScorer& scorer, double alpha,
                                std::uint64_t seed = 0) {
  detail::check_pipeline_inputs(clf, cal, test);
  LabelMarginal q = empirical_marginal(cal.labels, cal.num_classes);
  JointSplit joint = split_concat(cal, test);
  auto [adapted, trace] = solve(clf, joint.joint.features, q, solver_cfg);

  Matrix probs_joint = predict_proba(adapted, joint.joint.features);
  Matrix probs_cal = gather_rows(probs_joint, joint.cal_indices);
  ConformalPredictor pred =
      fit_conformal(scorer, probs_cal, cal.labels, alpha, detail::fit_seed(seed));

  PipelineResult out;
  out.probs_test = gather_rows(probs_joint, joint.test_indices);
  out.sets = build_sets(pred, out.probs_test, detail::set_seed(seed));
  out.predictor = pred;
  out.trace = std::move(trace);
  return out;
}

// Dispatch by strategy kind. ScaT runs the prior-matching objective, ScaTTim
// the uniform-marginal one, regardless of what the solver config says.
inline PipelineResult run_strategy(const StrategyConfig& cfg, const PrototypeClassifier& clf,
                                   const EmbeddingSet& cal, const EmbeddingSet& test,
                                   std::uint64_t seed) {
  switch (cfg.strategy) {
    case StrategyKind::Scp:
      return run_scp(clf, cal, test, cfg.scorer, cfg.alpha, seed);
    case StrategyKind::AdaptScp:
      return run_adapt_scp(clf, cal, test, cfg.probe, cfg.scorer, cfg.alpha, seed);
    case StrategyKind::ScaT: {
      SolverConfig s = cfg.solver;
      s.objective = Objective::KlPrior;
      return run_sca_t(clf, cal, test, s, cfg.scorer, cfg.alpha, seed);
    }
    case StrategyKind::ScaTTim: {
      SolverConfig s = cfg.solver;
      s.objective = Objective::Tim;
      return run_sca_t(clf, cal, test, s, cfg.scorer, cfg.alpha, seed);
    }
  }
  throw ConfigError("unknown strategy");
}

}  // namespace sconf
