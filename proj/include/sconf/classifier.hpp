#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/matrix.hpp"

namespace sconf {

// Linear prototype classifier over unit-sphere embeddings. Rows of `weights`
// are class prototypes; probabilities are a temperature-scaled softmax over
// prototype dot products. Prototypes may have any norm: averaging unit
// template vectors shrinks them below 1 and nothing here rescales them.
struct PrototypeClassifier {
  Matrix weights;            // C x D
  double temperature = 0.01; // divides the logits; must be > 0

  std::size_t num_classes() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }
};

namespace detail {

// In-place stable softmax along rows: z -> p. Optionally emits log p taken
// from the shifted logits, which stays finite for finite logits even where
// p itself underflows to zero.
inline void softmax_rows_inplace(Matrix& z, Matrix* logp) {
  const std::size_t c = z.cols();
  if (logp) *logp = Matrix(z.rows(), c);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    double zmax = row[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double shifted = row[j] - zmax;
      if (logp) (*logp)(r, j) = shifted;
      row[j] = std::exp(shifted);
      sum += row[j];
    }
    double lse = std::log(sum);
    if (logp) {
      auto lrow = logp->row(r);
      for (std::size_t j = 0; j < c; ++j) lrow[j] -= lse;
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
}

inline Matrix logits(const PrototypeClassifier& clf, const Matrix& features) {
  if (features.cols() != clf.dim())
    throw DataError("feature dimension " + std::to_string(features.cols()) +
                    " does not match classifier dimension " + std::to_string(clf.dim()));
  if (!(clf.temperature > 0.0) || !std::isfinite(clf.temperature))
    throw NumericError("temperature must be a positive finite number");
  const std::size_t n = features.rows(), c = clf.num_classes(), d = clf.dim();
  Matrix z(n, c);
  const double inv_tau = 1.0 / clf.temperature;
  for (std::size_t r = 0; r < n; ++r) {
    auto v = features.row(r);
    auto zr = z.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      auto w = clf.weights.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += v[k] * w[k];
      zr[j] = s * inv_tau;
      if (!std::isfinite(zr[j]))
        throw NumericError("non-finite logit at temperature " +
                           std::to_string(clf.temperature) +
                           " (temperature too small for the weight scale)");
    }
  }
  return z;
}

}  // namespace detail

// Row-stochastic softmax of arbitrary logits; exposed for tests and reuse.
inline Matrix softmax_rows(Matrix logits) {
  detail::softmax_rows_inplace(logits, nullptr);
  return logits;
}

inline Matrix predict_proba(const PrototypeClassifier& clf, const Matrix& features) {
  if (clf.num_classes() < 2) throw DataError("classifier needs at least two prototypes");
  Matrix p = detail::logits(clf, features);
  detail::softmax_rows_inplace(p, nullptr);
  return p;
}

inline Matrix predict_proba(const PrototypeClassifier& clf, const EmbeddingSet& set) {
  return predict_proba(clf, set.features);
}

// Highest-probability class per row, ties to the lowest class index.
inline std::vector<std::int32_t> predict_labels(const Matrix& probs) {
  std::vector<std::int32_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[r] = static_cast<std::int32_t>(best);
  }
  return out;
}

// Builds prototypes as plain averages of per-class template embeddings.
// Templates must be unit vectors; the averaged prototype is NOT re-normalized,
// so mutually cancelling templates legitimately produce short or zero rows.
inline PrototypeClassifier build_text_prototypes(const std::vector<Matrix>& class_templates,
                                                 double temperature = 0.01) {
  if (class_templates.size() < 2)
    throw DataError("need templates for at least two classes");
  const std::size_t d = class_templates.front().cols();
  PrototypeClassifier clf;
  clf.temperature = temperature;
  clf.weights = Matrix(class_templates.size(), d);
  for (std::size_t c = 0; c < class_templates.size(); ++c) {
    const Matrix& t = class_templates[c];
    if (t.rows() == 0)
      throw DataError("class " + std::to_string(c) + " has no template embeddings");
    if (t.cols() != d)
      throw DataError("class " + std::to_string(c) + " templates have mismatched dimension");
    for (std::size_t j = 0; j < t.rows(); ++j) {
      double norm = l2_norm(t.row(j));
      if (std::abs(norm - 1.0) > 1e-3)
        throw DataError("template " + std::to_string(j) + " of class " +
                        std::to_string(c) + " is not unit norm");
    }
    auto w = clf.weights.row(c);
    for (std::size_t j = 0; j < t.rows(); ++j) {
      auto row = t.row(j);
      for (std::size_t k = 0; k < d; ++k) w[k] += row[k];
    }
    for (std::size_t k = 0; k < d; ++k) w[k] /= static_cast<double>(t.rows());
  }
  return clf;
}

// ============================================================================
// Store: weights in the binary embedding container (unlabeled, no row
// normalization applied on either side), temperature in a one-line JSON
// sidecar at <path>.json.
// ============================================================================

inline void save_classifier(const PrototypeClassifier& clf, const std::string& path) {
  write_embedding_binary(path, clf.weights, {},
                         static_cast<std::int32_t>(clf.num_classes()));
  std::ofstream os(path + ".json");
  if (!os) throw DataError("cannot open " + path + ".json for writing");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", clf.temperature);
  os << "{\"temperature\": " << buf << "}\n";
  if (!os) throw DataError("write failed for " + path + ".json");
}

inline PrototypeClassifier load_classifier(const std::string& path) {
  RawEmbeddingFile raw = read_embedding_binary(path);
  if (!raw.labels.empty()) throw DataError(path + ": classifier file must not carry labels");
  if (raw.features.rows() != static_cast<std::size_t>(raw.num_classes))
    throw DataError(path + ": row count does not match declared class count");
  if (raw.num_classes < 2) throw DataError(path + ": classifier needs >= 2 classes");

  std::ifstream is(path + ".json");
  if (!is) throw DataError("missing classifier sidecar " + path + ".json");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto key = text.find("\"temperature\"");
  if (key == std::string::npos)
    throw DataError(path + ".json: no temperature field");
  auto colon = text.find(':', key);
  if (colon == std::string::npos) throw DataError(path + ".json: malformed sidecar");
  char* end = nullptr;
  double tau = std::strtod(text.c_str() + colon + 1, &end);
  if (end == text.c_str() + colon + 1 || !(tau > 0.0) || !std::isfinite(tau))
    throw DataError(path + ".json: temperature must be a positive number");

  PrototypeClassifier clf;
  clf.weights = std::move(raw.features);
  clf.temperature = tau;
  return clf;
}

}  // namespace sconf
