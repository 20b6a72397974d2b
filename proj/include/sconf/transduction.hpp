#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sconf/adam.hpp"
#include "sconf/classifier.hpp"
#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/matrix.hpp"

namespace sconf {

// Unsupervised prototype refinement on a pooled (calibration + test) feature
// matrix. The solver sees features and a target label marginal only, never
// row labels, so every row is treated identically regardless of which split
// it came from.
//
// Both objectives are minimized:
//   tim:  lambda * H_cond(W) - H(qhat(W))
//   kl:   lambda * H_cond(W) + KL(qhat(W) || q)
// where H_cond is the mean Shannon entropy of the per-row predictions and
// qhat is the mean predicted probability vector across all rows. Minimizing
// -H(qhat) == +sum qhat log qhat spreads the predicted marginal toward
// uniform; the KL form pulls it toward a supplied prior q instead, and the
// two regularizers coincide up to the constant log C when q is uniform.

enum class Objective { Tim, KlPrior };

inline const char* to_string(Objective o) {
  return o == Objective::Tim ? "TIM" : "KL_PRIOR";
}

enum class LrSchedule { Cosine };

struct SolverConfig {
  Objective objective = Objective::KlPrior;
  double lambda = 1.0;   // weight on the conditional-entropy term
  int iterations = 100;
  double base_lr = 0.01;
  LrSchedule schedule = LrSchedule::Cosine;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct SolverTrace {
  std::vector<double> objectives;     // f(W_t) before each step, length = iterations
  std::vector<double> learning_rates; // lr applied at each step
  Matrix initial_weights;
  Matrix final_weights;
  bool converged = false;  // last two objective values within 1e-8 relative
};

namespace detail {

// Floor applied to probabilities inside logs only.
inline constexpr double kLogFloor = 1e-12;

// Row indices in lexicographic feature order. Every sum over rows follows
// this order, which makes objective values and gradients (hence the whole
// solve) bit-identical under any permutation of the input rows: equal rows
// contribute equal addends, so their relative order cannot matter.
inline std::vector<std::size_t> canonical_row_order(const Matrix& x) {
  std::vector<std::size_t> idx(x.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    auto ra = x.row(a), rb = x.row(b);
    for (std::size_t j = 0; j < ra.size(); ++j) {
      if (ra[j] < rb[j]) return true;
      if (ra[j] > rb[j]) return false;
    }
    return false;
  });
  return idx;
}

struct ObjectiveEval {
  double value = 0.0;
  Matrix grad;  // d value / d W, same shape as W; empty unless requested
};

// Shared evaluator for both objectives. q is ignored for Tim; for KlPrior,
// classes with q_c == 0 are excluded from the KL sum (and exert no pull).
inline ObjectiveEval evaluate_objective(Objective objective, const Matrix& w,
                                        const Matrix& x, double tau, double lambda,
                                        const LabelMarginal* q,
                                        const std::vector<std::size_t>& order,
                                        bool want_grad) {
  const std::size_t n = x.rows();
  const std::size_t c = w.rows();
  if (n == 0) throw DataError("objective over an empty feature matrix");
  if (x.cols() != w.cols()) throw DataError("feature/weight dimension mismatch");
  if (objective == Objective::KlPrior) {
    if (q == nullptr) throw DataError("KL objective needs a label marginal");
    validate_marginal(*q);
    if (q->probs.size() != c)
      throw DataError("label marginal length does not match class count");
  }
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw ConfigError("lambda must be finite and >= 0");

  PrototypeClassifier view{w, tau};
  Matrix p = logits(view, x);
  Matrix logp;
  softmax_rows_inplace(p, &logp);

  const double inv_n = 1.0 / static_cast<double>(n);

  // Predicted marginal, accumulated in canonical row order.
  std::vector<double> qhat(c, 0.0);
  for (std::size_t i : order) {
    auto pr = p.row(i);
    for (std::size_t j = 0; j < c; ++j) qhat[j] += pr[j];
  }
  for (std::size_t j = 0; j < c; ++j) qhat[j] *= inv_n;

  // Mean conditional entropy: -(1/n) sum_i sum_c p log p.
  double plogp = 0.0;
  for (std::size_t i : order) {
    auto pr = p.row(i);
    auto lr = logp.row(i);
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row += pr[j] * lr[j];
    plogp += row;
  }
  const double h_cond = -plogp * inv_n;

  double reg = 0.0;
  if (objective == Objective::Tim) {
    for (std::size_t j = 0; j < c; ++j)
      reg += qhat[j] * std::log(std::max(qhat[j], kLogFloor));
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      double qc = q->probs[j];
      if (qc <= 0.0) continue;
      reg += qhat[j] * std::log(std::max(qhat[j], kLogFloor) / qc);
    }
  }

  ObjectiveEval out;
  out.value = lambda * h_cond + reg;
  if (!want_grad) return out;

  // d reg / d qhat_c, with the same flooring as the value.
  std::vector<double> r(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    if (objective == Objective::Tim) {
      r[j] = std::log(std::max(qhat[j], kLogFloor)) + 1.0;
    } else {
      double qc = q->probs[j];
      r[j] = qc > 0.0 ? std::log(std::max(qhat[j], kLogFloor) / qc) + 1.0 : 0.0;
    }
  }

  // Chain rule through the softmax. With a_ic = d value / d p_ic,
  //   g_ic = p_ic (a_ic - sum_k a_ik p_ik),  dW_c = (1/tau) sum_i g_ic x_i.
  out.grad = Matrix(c, w.cols());
  const double inv_tau = 1.0 / tau;
  std::vector<double> a(c, 0.0);
  for (std::size_t i : order) {
    auto pr = p.row(i);
    auto lr = logp.row(i);
    double abar = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      a[j] = -lambda * inv_n * (lr[j] + 1.0) + r[j] * inv_n;
      abar += a[j] * pr[j];
    }
    auto xi = x.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      double g = pr[j] * (a[j] - abar) * inv_tau;
      if (g == 0.0) continue;
      auto gw = out.grad.row(j);
      for (std::size_t k = 0; k < xi.size(); ++k) gw[k] += g * xi[k];
    }
  }
  return out;
}

}  // namespace detail

inline double objective_tim(const Matrix& w, const Matrix& x, double tau, double lambda) {
  auto order = detail::canonical_row_order(x);
  return detail::evaluate_objective(Objective::Tim, w, x, tau, lambda, nullptr, order,
                                    false)
      .value;
}

inline double objective_kl(const Matrix& w, const Matrix& x, double tau, double lambda,
                           const LabelMarginal& q) {
  auto order = detail::canonical_row_order(x);
  return detail::evaluate_objective(Objective::KlPrior, w, x, tau, lambda, &q, order,
                                    false)
      .value;
}

inline Matrix objective_gradient(Objective objective, const Matrix& w, const Matrix& x,
                                 double tau, double lambda,
                                 const LabelMarginal* q = nullptr) {
  auto order = detail::canonical_row_order(x);
  return detail::evaluate_objective(objective, w, x, tau, lambda, q, order, true).grad;
}

// Refines the initial prototypes by full-batch Adam with cosine-decayed
// steps. Weights are never re-normalized and the temperature is carried
// through unchanged. Deterministic; permutation of the input rows leaves the
// result bit-identical (see canonical_row_order).
inline std::pair<PrototypeClassifier, SolverTrace> solve(const PrototypeClassifier& init,
                                                         const Matrix& features,
                                                         const LabelMarginal& q,
                                                         const SolverConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("solver iterations must be >= 1");
  if (!(cfg.base_lr > 0.0) || !std::isfinite(cfg.base_lr))
    throw ConfigError("solver base_lr must be > 0");
  if (init.num_classes() < 2) throw DataError("solver needs >= 2 prototypes");

  const LabelMarginal* qp = cfg.objective == Objective::KlPrior ? &q : nullptr;
  auto order = detail::canonical_row_order(features);

  PrototypeClassifier clf = init;
  SolverTrace trace;
  trace.initial_weights = init.weights;
  AdamOptimizer adam(clf.weights.rows(), clf.weights.cols(), cfg.adam_beta1,
                     cfg.adam_beta2, cfg.adam_eps);
  trace.objectives.reserve(static_cast<std::size_t>(cfg.iterations));
  trace.learning_rates.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int t = 0; t < cfg.iterations; ++t) {
    auto eval = detail::evaluate_objective(cfg.objective, clf.weights, features,
                                           clf.temperature, cfg.lambda, qp, order, true);
    if (!std::isfinite(eval.value))
      throw NumericError("objective became non-finite at iteration " + std::to_string(t));
    double lr = cosine_lr(cfg.base_lr, t, cfg.iterations);
    trace.objectives.push_back(eval.value);
    trace.learning_rates.push_back(lr);
    adam.step(clf.weights, eval.grad, lr);
  }
  trace.final_weights = clf.weights;
  const std::size_t nt = trace.objectives.size();
  if (nt >= 2) {
    double last = trace.objectives[nt - 1], prev = trace.objectives[nt - 2];
    trace.converged = std::abs(last - prev) <= 1e-8 * std::max(1.0, std::abs(last));
  }
  return {std::move(clf), std::move(trace)};
}

inline void write_trace_csv(std::ostream& os, const SolverTrace& trace) {
  os << "iteration,objective,lr\n";
  char buf[64];
  for (std::size_t t = 0; t < trace.objectives.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", t, trace.objectives[t],
                  trace.learning_rates[t]);
    os << buf << '\n';
  }
}

}  // namespace sconf
