#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "sconf/sconf.hpp"

using namespace sconf;

TEST_CASE("identical prototypes give uniform probabilities", "[classifier]") {
  PrototypeClassifier clf{Matrix::from_rows({{0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}}), 0.01};
  Rng rng(1);
  Matrix p = predict_proba(clf, th::random_unit_rows(rng, 5, 2));
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j)
      REQUIRE(p(i, j) == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("two-class log-odds of ln 3 gives 0.75/0.25", "[classifier]") {
  PrototypeClassifier clf{Matrix::from_rows({{std::log(3.0), 0.0}, {0.0, 0.0}}), 1.0};
  Matrix p = predict_proba(clf, Matrix::from_rows({{1.0, 0.0}}));
  REQUIRE(p(0, 0) == Catch::Approx(0.75).margin(1e-12));
  REQUIRE(p(0, 1) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("probabilities are invariant under per-row logit shifts", "[classifier]") {
  // Append a coordinate that is 1 in the input and k*tau in every prototype:
  // every logit of that row shifts by exactly k.
  Rng rng(2);
  const double tau = 0.5;
  Matrix w = th::random_unit_rows(rng, 4, 3);
  Matrix v = th::random_unit_rows(rng, 1, 3);
  for (double k : {-7.0, 0.0, 3.25}) {
    Matrix w_ext(4, 4);
    Matrix v_ext(1, 4);
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t j = 0; j < 3; ++j) w_ext(c, j) = w(c, j);
      w_ext(c, 3) = k * tau;
    }
    for (std::size_t j = 0; j < 3; ++j) v_ext(0, j) = v(0, j);
    v_ext(0, 3) = 1.0;
    Matrix base = predict_proba(PrototypeClassifier{w, tau}, v);
    Matrix shifted = predict_proba(PrototypeClassifier{w_ext, tau}, v_ext);
    for (std::size_t j = 0; j < 4; ++j)
      REQUIRE(shifted(0, j) == Catch::Approx(base(0, j)).margin(1e-12));
  }
}

TEST_CASE("class permutation of prototypes permutes probability columns", "[classifier]") {
  Rng rng(3);
  Matrix w = th::random_unit_rows(rng, 5, 6);
  Matrix x = th::random_unit_rows(rng, 7, 6);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Matrix wp(5, 6);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t j = 0; j < 6; ++j) wp(c, j) = w(perm[c], j);
  Matrix p = predict_proba(PrototypeClassifier{w, 0.3}, x);
  Matrix pp = predict_proba(PrototypeClassifier{wp, 0.3}, x);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t c = 0; c < 5; ++c)
      REQUIRE(pp(i, c) == Catch::Approx(p(i, perm[c])).margin(1e-12));
}

TEST_CASE("rows are stochastic to 1e-9 on random instances", "[classifier]") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    std::size_t c = 2 + rng.uniform_index(6);
    std::size_t d = 2 + rng.uniform_index(8);
    Matrix p = predict_proba(PrototypeClassifier{th::random_unit_rows(rng, c, d), 0.05},
                             th::random_unit_rows(rng, 9, d));
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) {
        REQUIRE(p(i, j) >= 0.0);
        sum += p(i, j);
      }
      REQUIRE(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("small-temperature argmax matches nearest prototype by dot", "[classifier]") {
  Rng rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    Matrix w = th::random_unit_rows(rng, 6, 10);
    Matrix x = th::random_unit_rows(rng, 20, 10);
    auto labels = predict_labels(predict_proba(PrototypeClassifier{w, 1e-3}, x));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 6; ++c)
        if (dot(x.row(i), w.row(c)) > dot(x.row(i), w.row(best))) best = c;
      REQUIRE(labels[i] == static_cast<std::int32_t>(best));
    }
  }
}

TEST_CASE("argmax ties resolve to the lowest class index", "[classifier]") {
  Matrix p = Matrix::from_rows({{0.25, 0.25, 0.25, 0.25}, {0.2, 0.4, 0.4, 0.0}});
  auto labels = predict_labels(p);
  REQUIRE(labels == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("dimension mismatch is rejected", "[classifier]") {
  Rng rng(6);
  PrototypeClassifier clf{th::random_unit_rows(rng, 3, 4), 0.01};
  REQUIRE_THROWS_AS(predict_proba(clf, th::random_unit_rows(rng, 2, 5)), DataError);
}

TEST_CASE("overflowing temperature names the knob", "[classifier]") {
  PrototypeClassifier clf{Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}), 1e-320};
  REQUIRE_THROWS_MATCHES(
      predict_proba(clf, Matrix::from_rows({{1.0, 0.0}})), NumericError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("temperature")));
}

TEST_CASE("text prototypes average without renormalizing", "[classifier]") {
  // Two orthonormal templates average to (0.5, 0.5), norm sqrt(0.5).
  PrototypeClassifier clf = build_text_prototypes(
      {Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}), Matrix::from_rows({{0.0, 1.0}})});
  REQUIRE(clf.weights(0, 0) == 0.5);
  REQUIRE(clf.weights(0, 1) == 0.5);
  REQUIRE(l2_norm(clf.weights.row(0)) == Catch::Approx(std::sqrt(0.5)).margin(1e-12));
  // A single template passes through unchanged.
  REQUIRE(clf.weights(1, 0) == 0.0);
  REQUIRE(clf.weights(1, 1) == 1.0);
}

TEST_CASE("antipodal templates yield the zero prototype", "[classifier]") {
  PrototypeClassifier clf = build_text_prototypes(
      {Matrix::from_rows({{1.0, 0.0}, {-1.0, 0.0}}), Matrix::from_rows({{0.0, 1.0}})});
  REQUIRE(clf.weights(0, 0) == 0.0);
  REQUIRE(clf.weights(0, 1) == 0.0);
}

TEST_CASE("text prototype validation names class and template", "[classifier]") {
  REQUIRE_THROWS_MATCHES(
      build_text_prototypes({Matrix::from_rows({{1.0, 0.0}}), Matrix(0, 2)}), DataError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("class 1")));
  REQUIRE_THROWS_MATCHES(
      build_text_prototypes(
          {Matrix::from_rows({{1.0, 0.0}}), Matrix::from_rows({{3.0, 0.0}})}),
      DataError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("class 1")));
}

TEST_CASE("classifier save/load round trip", "[classifier]") {
  th::TempDir dir;
  Rng rng(7);
  Matrix w = th::random_unit_rows(rng, 4, 6);
  w(2, 3) *= 1.7;  // prototypes need not be unit norm
  PrototypeClassifier clf{w, 0.037};
  save_classifier(clf, dir.file("clf.emb"));
  PrototypeClassifier back = load_classifier(dir.file("clf.emb"));
  REQUIRE(back.temperature == 0.037);
  REQUIRE(back.num_classes() == 4);
  // One float32 round trip on save; stable thereafter.
  save_classifier(back, dir.file("clf2.emb"));
  PrototypeClassifier again = load_classifier(dir.file("clf2.emb"));
  REQUIRE(again.weights == back.weights);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      REQUIRE(back.weights(i, j) == static_cast<double>(static_cast<float>(w(i, j))));
}

TEST_CASE("classifier load requires the sidecar", "[classifier]") {
  th::TempDir dir;
  Rng rng(8);
  save_classifier(PrototypeClassifier{th::random_unit_rows(rng, 3, 4), 0.01},
                  dir.file("clf.emb"));
  std::filesystem::remove(dir.file("clf.emb.json"));
  REQUIRE_THROWS_MATCHES(
      load_classifier(dir.file("clf.emb")), DataError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("sidecar")));
}
