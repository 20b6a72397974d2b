#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "sconf/sconf.hpp"

namespace th {

inline sconf::Matrix random_unit_rows(sconf::Rng& rng, std::size_t n, std::size_t d) {
  sconf::Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        m(i, j) = rng.normal();
        norm2 += m(i, j) * m(i, j);
      }
    } while (norm2 < 1e-12);
    double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j) m(i, j) *= inv;
  }
  return m;
}

// Generic strictly-positive stochastic rows (softmax of Gaussians).
inline sconf::Matrix random_prob_rows(sconf::Rng& rng, std::size_t n, std::size_t c) {
  sconf::Matrix m(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      m(i, j) = std::exp(rng.normal());
      sum += m(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) m(i, j) /= sum;
  }
  return m;
}

inline std::vector<std::int32_t> random_labels(sconf::Rng& rng, std::size_t n,
                                               std::int32_t c) {
  std::vector<std::int32_t> out(n);
  for (auto& y : out)
    y = static_cast<std::int32_t>(rng.uniform_index(static_cast<std::size_t>(c)));
  return out;
}

// EmbeddingSet built directly from already-unit rows (no loader involved).
inline sconf::EmbeddingSet make_set(sconf::Matrix rows, std::vector<std::int32_t> labels,
                                    std::int32_t num_classes) {
  sconf::EmbeddingSet set;
  set.features = std::move(rows);
  set.labels = std::move(labels);
  set.num_classes = num_classes;
  return set;
}

inline sconf::EmbeddingSet random_set(sconf::Rng& rng, std::size_t n, std::size_t d,
                                      std::int32_t c, bool labeled) {
  return make_set(random_unit_rows(rng, n, d),
                  labeled ? random_labels(rng, n, c) : std::vector<std::int32_t>{}, c);
}

// Exact conformal order-statistic index for rational alpha = num/den, done in
// integer arithmetic so no float rounding can creep into the expected value.
inline double quantile_oracle(std::vector<double> scores, long long num, long long den) {
  const long long n = static_cast<long long>(scores.size());
  const long long k = ((n + 1) * (den - num) + den - 1) / den;  // ceil((n+1)(1-a))
  if (k > n) return std::numeric_limits<double>::infinity();
  std::sort(scores.begin(), scores.end());
  return scores[static_cast<std::size_t>(k - 1)];
}

// Independent characterization: smallest candidate value s among the scores
// with #{i : s_i <= s} >= k. Agrees with the order statistic by construction
// but exercises the definition the way a reader would.
inline double threshold_scan_oracle(std::vector<double> scores, long long num,
                                    long long den) {
  const long long n = static_cast<long long>(scores.size());
  const long long k = ((n + 1) * (den - num) + den - 1) / den;
  if (k > n) return std::numeric_limits<double>::infinity();
  std::sort(scores.begin(), scores.end());
  for (double s : scores) {
    long long count = 0;
    for (double x : scores)
      if (x <= s) ++count;
    if (count >= k) return s;
  }
  return std::numeric_limits<double>::infinity();
}

inline sconf::Matrix fd_gradient(sconf::Objective objective, const sconf::Matrix& w,
                                 const sconf::Matrix& x, double tau, double lambda,
                                 const sconf::LabelMarginal* q, double h = 1e-5) {
  auto eval = [&](const sconf::Matrix& wp) {
    return objective == sconf::Objective::Tim
               ? sconf::objective_tim(wp, x, tau, lambda)
               : sconf::objective_kl(wp, x, tau, lambda, *q);
  };
  sconf::Matrix g(w.rows(), w.cols());
  sconf::Matrix wp = w;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < w.cols(); ++c) {
      const double orig = wp(r, c);
      wp(r, c) = orig + h;
      const double fp = eval(wp);
      wp(r, c) = orig - h;
      const double fm = eval(wp);
      wp(r, c) = orig;
      g(r, c) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

// max |a-b| / max(max|b|, floor), the matrix-level relative error.
inline double max_rel_err(const sconf::Matrix& a, const sconf::Matrix& b) {
  double num = 0.0, den = 1e-12;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    num = std::max(num, std::abs(a.data()[i] - b.data()[i]));
    den = std::max(den, std::abs(b.data()[i]));
  }
  return num / den;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string t = (std::filesystem::temp_directory_path() / "sconf_test_XXXXXX").string();
    std::vector<char> buf(t.begin(), t.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace th
