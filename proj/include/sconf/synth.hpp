#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sconf/classifier.hpp"
#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/matrix.hpp"
#include "sconf/rng.hpp"

namespace sconf {

// Clustered unit-sphere task: one Gaussian direction per class (orthonormal
// when D >= C), samples drawn as normalize(kappa * mu_class + noise), and a
// zero-shot classifier whose prototypes are the true directions perturbed by
// sigma * Gaussian and re-normalized.
struct SynthSpec {
  std::int32_t num_classes = 0;        // C >= 2
  std::int32_t dim = 0;                // D >= 2
  double concentration = 5.0;          // kappa >= 0; higher = tighter clusters
  LabelMarginal class_marginal;        // empty = uniform
  std::int32_t n_samples = 0;          // pool size, >= 1
  double prototype_perturbation = 0.0; // sigma >= 0
  double temperature = 0.01;           // carried onto the emitted classifier
  std::uint64_t seed = 0;
};

struct SynthTask {
  EmbeddingSet pool;
  PrototypeClassifier zero_shot;
  Matrix true_directions;  // C x D unit rows
};

namespace detail {

inline void fill_gaussian(Rng& rng, std::span<double> v) {
  for (double& x : v) x = rng.normal();
}

// Draw order is fixed: class directions (with Gram-Schmidt redraws), then
// prototype perturbations, then per-sample (label, noise) pairs. Changing
// n_samples therefore never disturbs the task geometry.
inline std::int32_t draw_class(Rng& rng, const LabelMarginal& m) {
  double u = rng.uniform01();
  double cum = 0.0;
  for (std::size_t c = 0; c < m.probs.size(); ++c) {
    cum += m.probs[c];
    if (u < cum) return static_cast<std::int32_t>(c);
  }
  return static_cast<std::int32_t>(m.probs.size() - 1);
}

}  // namespace detail

inline SynthTask generate(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synth num_classes must be >= 2");
  if (spec.dim < 2) throw ConfigError("synth dim must be >= 2");
  if (spec.n_samples < 1) throw ConfigError("synth n_samples must be >= 1");
  if (!(spec.concentration >= 0.0) || !std::isfinite(spec.concentration))
    throw ConfigError("synth concentration must be finite and >= 0");
  if (!(spec.prototype_perturbation >= 0.0) || !std::isfinite(spec.prototype_perturbation))
    throw ConfigError("synth prototype_perturbation must be finite and >= 0");
  LabelMarginal marginal = spec.class_marginal.probs.empty()
                               ? uniform_marginal(spec.num_classes)
                               : spec.class_marginal;
  validate_marginal(marginal);
  if (marginal.num_classes() != spec.num_classes)
    throw ConfigError("synth class_marginal length must equal num_classes");

  const auto c = static_cast<std::size_t>(spec.num_classes);
  const auto d = static_cast<std::size_t>(spec.dim);
  Rng rng(spec.seed);

  // Class directions; orthonormalized when the ambient space allows it.
  Matrix mu(c, d);
  for (std::size_t i = 0; i < c; ++i) {
    auto row = mu.row(i);
    for (int attempt = 0;; ++attempt) {
      detail::fill_gaussian(rng, row);
      if (d >= c) {
        for (std::size_t j = 0; j < i; ++j) {
          double proj = dot(row, mu.row(j));
          auto prev = mu.row(j);
          for (std::size_t k = 0; k < d; ++k) row[k] -= proj * prev[k];
        }
      }
      double norm = l2_norm(row);
      if (norm > 1e-9) {
        for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
        break;
      }
      if (attempt > 32) throw NumericError("failed to draw independent class directions");
    }
  }

  // Zero-shot prototypes: perturbed directions, re-normalized.
  Matrix proto(c, d);
  std::vector<double> g(d);
  for (std::size_t i = 0; i < c; ++i) {
    detail::fill_gaussian(rng, g);
    auto row = proto.row(i);
    auto m = mu.row(i);
    for (std::size_t k = 0; k < d; ++k)
      row[k] = m[k] + spec.prototype_perturbation * g[k];
    double norm = l2_norm(row);
    if (norm <= 1e-9) throw NumericError("degenerate prototype perturbation");
    for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
  }

  // Samples.
  Matrix feats(static_cast<std::size_t>(spec.n_samples), d);
  std::vector<std::int32_t> labels(static_cast<std::size_t>(spec.n_samples));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::int32_t y = detail::draw_class(rng, marginal);
    labels[i] = y;
    auto row = feats.row(i);
    auto m = mu.row(static_cast<std::size_t>(y));
    detail::fill_gaussian(rng, row);
    for (std::size_t k = 0; k < d; ++k) row[k] += spec.concentration * m[k];
    double norm = l2_norm(row);
    if (norm <= 1e-12) throw NumericError("degenerate sample draw");
    for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
  }

  SynthTask task;
  task.pool.features = std::move(feats);
  task.pool.labels = std::move(labels);
  task.pool.num_classes = spec.num_classes;
  task.zero_shot.weights = std::move(proto);
  task.zero_shot.temperature = spec.temperature;
  task.true_directions = std::move(mu);
  return task;
}

}  // namespace sconf
