#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sconf/errors.hpp"
#include "sconf/matrix.hpp"
#include "sconf/rng.hpp"

namespace sconf {

// ============================================================================
// Nonconformity scores
// ============================================================================

enum class ScoreKind { Lac, Aps, Raps };

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::Lac: return "LAC";
    case ScoreKind::Aps: return "APS";
    case ScoreKind::Raps: return "RAPS";
  }
  return "?";
}

struct NonconformityScorer {
  ScoreKind kind = ScoreKind::Lac;
  // Randomized variant of APS/RAPS subtracts u * p_y (u ~ U[0,1)); off by
  // default so scores are a pure function of the probability vector.
  bool randomized = false;
  int raps_k_reg = 1;          // rank beyond which the penalty kicks in
  double raps_penalty = 0.001; // per-rank additive penalty

  bool needs_u() const {
    return randomized && (kind == ScoreKind::Aps || kind == ScoreKind::Raps);
  }
};

namespace detail {

inline void validate_prob_row(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12)
      throw NumericError("probability vector has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw NumericError("probability vector sums to " + std::to_string(sum) +
                       ", expected 1 within 1e-6");
}

// Class order used by APS/RAPS: descending probability, ties broken by
// ascending class index. stable_sort on a strict descending comparator keeps
// equal-probability classes in index order, and the same routine runs at
// calibration and prediction time.
inline std::vector<std::size_t> descending_order(std::span<const double> p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return idx;
}

}  // namespace detail

// Nonconformity of label y under probability row p. Low means conforming.
//   LAC:  1 - p_y
//   APS:  cumulative probability through y in the descending order above,
//         minus u * p_y when randomized
//   RAPS: APS plus raps_penalty * max(0, rank(y) - raps_k_reg), 1-based rank
inline double score(const NonconformityScorer& scorer, std::span<const double> p,
                    std::int32_t y, std::optional<double> u = std::nullopt) {
  detail::validate_prob_row(p);
  if (y < 0 || static_cast<std::size_t>(y) >= p.size())
    throw DataError("label " + std::to_string(y) + " outside [0, " +
                    std::to_string(p.size()) + ")");
  if (scorer.needs_u() && !u.has_value())
    throw NumericError("randomized scorer requires a uniform draw");
  if (!scorer.needs_u() && u.has_value())
    throw NumericError("deterministic scorer must not receive a uniform draw");
  if (u.has_value() && !(*u >= 0.0 && *u < 1.0))
    throw NumericError("uniform draw outside [0, 1)");

  if (scorer.kind == ScoreKind::Lac) return 1.0 - p[static_cast<std::size_t>(y)];

  auto order = detail::descending_order(p);
  double cum = 0.0;
  std::size_t rank = 0;  // 1-based after the loop
  for (std::size_t j = 0; j < order.size(); ++j) {
    cum += p[order[j]];
    if (order[j] == static_cast<std::size_t>(y)) {
      rank = j + 1;
      break;
    }
  }
  double s = cum;
  if (u.has_value()) s -= *u * p[static_cast<std::size_t>(y)];
  if (scorer.kind == ScoreKind::Raps) {
    double over = static_cast<double>(rank) - static_cast<double>(scorer.raps_k_reg);
    s += scorer.raps_penalty * std::max(0.0, over);
  }
  return s;
}

namespace detail {

// Scores for every candidate label of one row; shares one sort across labels.
// useed keys the per-(row,label) uniform draws for the randomized variant.
inline std::vector<double> score_all_labels(const NonconformityScorer& scorer,
                                            std::span<const double> p,
                                            std::uint64_t useed, std::size_t row) {
  validate_prob_row(p);
  const std::size_t c = p.size();
  std::vector<double> out(c);
  if (scorer.kind == ScoreKind::Lac) {
    for (std::size_t y = 0; y < c; ++y) out[y] = 1.0 - p[y];
    return out;
  }
  auto order = descending_order(p);
  double cum = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    cum += p[order[j]];
    std::size_t y = order[j];
    double s = cum;
    if (scorer.needs_u()) s -= uniform_for(useed, row, y) * p[y];
    if (scorer.kind == ScoreKind::Raps) {
      double over = static_cast<double>(j + 1) - static_cast<double>(scorer.raps_k_reg);
      s += scorer.raps_penalty * std::max(0.0, over);
    }
    out[y] = s;
  }
  return out;
}

}  // namespace detail

// ============================================================================
// Conformal quantile and predictor
// ============================================================================

// k-th smallest calibration score with k = ceil((N+1)(1-alpha)); +infinity
// when k exceeds N. No interpolation. The 1e-9 nudge keeps ceil from rounding
// an exact integer product up by one ulp (e.g. N=9, alpha=0.1).
inline double conformal_quantile(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw DataError("conformal quantile of an empty score list");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("alpha must lie strictly inside (0, 1)");
  for (double s : scores)
    if (std::isnan(s)) throw NumericError("calibration scores contain NaN");
  const double n = static_cast<double>(scores.size());
  double raw = (n + 1.0) * (1.0 - alpha);
  auto k = static_cast<long long>(std::ceil(raw - 1e-9));
  if (k < 1) k = 1;
  if (k > static_cast<long long>(scores.size()))
    return std::numeric_limits<double>::infinity();
  auto kth = scores.begin() + (k - 1);
  std::nth_element(scores.begin(), kth, scores.end());
  return *kth;
}

struct ConformalPredictor {
  NonconformityScorer scorer;
  double alpha = 0.1;
  double threshold = 0.0;          // may be +infinity
  std::size_t calibration_size = 0;
};

// Scores each calibration row at its true label and takes the conformal
// quantile. rng_seed feeds the randomized variant's uniform draws; the
// deterministic scorers ignore it.
inline ConformalPredictor fit_conformal(const NonconformityScorer& scorer,
                                        const Matrix& probs_cal,
                                        std::span<const std::int32_t> labels,
                                        double alpha, std::uint64_t rng_seed = 0) {
  if (probs_cal.rows() == 0) throw DataError("empty calibration set");
  if (labels.size() != probs_cal.rows())
    throw DataError("calibration labels and probability rows disagree in count");
  std::vector<double> scores(probs_cal.rows());
  for (std::size_t i = 0; i < probs_cal.rows(); ++i) {
    std::optional<double> u;
    if (scorer.needs_u())
      u = uniform_for(rng_seed, i, static_cast<std::uint64_t>(labels[i]));
    scores[i] = score(scorer, probs_cal.row(i), labels[i], u);
  }
  ConformalPredictor pred;
  pred.scorer = scorer;
  pred.alpha = alpha;
  pred.threshold = conformal_quantile(std::move(scores), alpha);
  pred.calibration_size = probs_cal.rows();
  return pred;
}

// Ascending label list; possibly empty (LAC makes no nonemptiness promise).
struct PredictionSet {
  std::vector<std::int32_t> members;

  std::size_t size() const { return members.size(); }
  bool contains(std::int32_t y) const {
    return std::binary_search(members.begin(), members.end(), y);
  }
};

// One set per probability row: every label whose score passes the threshold.
// Uniform draws are keyed by (rng_seed, row, label), so row order and any
// parallel split of the rows cannot change the output.
inline std::vector<PredictionSet> build_sets(const ConformalPredictor& pred,
                                             const Matrix& probs,
                                             std::uint64_t rng_seed) {
  std::vector<PredictionSet> sets(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto scores = detail::score_all_labels(pred.scorer, probs.row(i), rng_seed, i);
    auto& s = sets[i];
    for (std::size_t y = 0; y < scores.size(); ++y)
      if (scores[y] <= pred.threshold) s.members.push_back(static_cast<std::int32_t>(y));
  }
  return sets;
}

}  // namespace sconf
