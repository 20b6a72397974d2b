#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "sconf/sconf.hpp"

using namespace sconf;

namespace {

NonconformityScorer lac() {
  NonconformityScorer s;
  s.kind = ScoreKind::Lac;
  return s;
}

// Pool sliced into a labeled calibration set and an unlabeled test set.
struct SplitTask {
  EmbeddingSet cal;
  EmbeddingSet test;          // labels stripped
  std::vector<std::int32_t> test_labels;
  PrototypeClassifier clf;
};

SplitTask make_split(const SynthSpec& spec, std::size_t n_cal) {
  SynthTask task = generate(spec);
  SplitTask out;
  out.cal = slice_rows(task.pool, 0, n_cal);
  EmbeddingSet test = slice_rows(task.pool, n_cal, task.pool.size());
  out.test_labels = test.labels;
  out.test = test.without_labels();
  out.clf = task.zero_shot;
  return out;
}

SynthSpec band_spec(std::uint64_t seed) {
  SynthSpec s;
  s.num_classes = 3;
  s.dim = 16;
  s.concentration = 3.0;
  s.temperature = 0.25;
  s.n_samples = 29 + 250;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("indistinguishable prototypes give uniform sets at the exact threshold",
          "[pipelines]") {
  PrototypeClassifier clf;
  clf.weights = Matrix(4, 6, 0.0);
  for (std::size_t c = 0; c < 4; ++c) clf.weights(c, 0) = 1.0;
  clf.temperature = 0.5;
  Rng rng(3);
  EmbeddingSet cal = th::make_set(th::random_unit_rows(rng, 30, 6),
                                  th::random_labels(rng, 30, 4), 4);
  EmbeddingSet test = th::make_set(th::random_unit_rows(rng, 12, 6), {}, 4);
  PipelineResult r = run_scp(clf, cal, test, lac(), 0.1, 7);
  // Every probability is exactly 1/4, so every LAC score is exactly 0.75.
  REQUIRE(r.predictor.threshold == 0.75);
  for (const auto& s : r.sets) REQUIRE(s.members == std::vector<std::int32_t>{0, 1, 2, 3});
  REQUIRE_FALSE(r.trace.has_value());
}

TEST_CASE("too few calibration rows force full sets", "[pipelines]") {
  Rng rng(5);
  PrototypeClassifier clf;
  clf.weights = th::random_unit_rows(rng, 3, 8);
  clf.temperature = 0.2;
  EmbeddingSet cal = th::make_set(th::random_unit_rows(rng, 5, 8),
                                  th::random_labels(rng, 5, 3), 3);
  EmbeddingSet test = th::make_set(th::random_unit_rows(rng, 9, 8), {}, 3);
  PipelineResult r = run_scp(clf, cal, test, lac(), 0.05, 1);
  REQUIRE(r.predictor.threshold == std::numeric_limits<double>::infinity());
  for (const auto& s : r.sets) REQUIRE(s.size() == 3);
}

TEST_CASE("a vanishing probe step reduces adapt-then-calibrate to plain SCP",
          "[pipelines]") {
  SplitTask t = make_split(band_spec(51), 29);
  ProbeConfig probe;
  probe.base_lr = 1e-30;
  PipelineResult plain = run_scp(t.clf, t.cal, t.test, lac(), 0.1, 11);
  PipelineResult adapted = run_adapt_scp(t.clf, t.cal, t.test, probe, lac(), 0.1, 11);
  REQUIRE(adapted.predictor.threshold == plain.predictor.threshold);
  REQUIRE(adapted.sets.size() == plain.sets.size());
  for (std::size_t i = 0; i < plain.sets.size(); ++i)
    REQUIRE(adapted.sets[i].members == plain.sets[i].members);
}

TEST_CASE("probe training drives the cross-entropy loss down", "[pipelines]") {
  SplitTask t = make_split(band_spec(52), 60);
  ProbeConfig probe;
  std::vector<double> loss;
  PrototypeClassifier out = train_linear_probe(t.clf, t.cal, probe, &loss);
  REQUIRE(loss.size() == static_cast<std::size_t>(probe.iterations));
  REQUIRE(loss.back() < loss.front());
  for (std::size_t i = loss.size() - 10; i + 1 < loss.size(); ++i)
    REQUIRE(loss[i + 1] <= loss[i] + 1e-6);
  REQUIRE_FALSE(out.weights == t.clf.weights);
  REQUIRE(out.temperature == t.clf.temperature);
}

TEST_CASE("probe config validation", "[pipelines]") {
  SplitTask t = make_split(band_spec(53), 20);
  ProbeConfig probe;
  probe.iterations = 0;
  REQUIRE_THROWS_AS(train_linear_probe(t.clf, t.cal, probe), ConfigError);
  probe.iterations = 10;
  probe.base_lr = -0.5;
  REQUIRE_THROWS_AS(train_linear_probe(t.clf, t.cal, probe), ConfigError);
}

TEST_CASE("transductive run with an exactly-zero gradient matches plain SCP",
          "[pipelines]") {
  // Prototypes on coordinates {0,1}, features on {2,3}: the solver's gradient
  // is identically zero (uniform probabilities, uniform calibration marginal),
  // so refinement returns the zero-shot weights bit for bit.
  PrototypeClassifier clf;
  clf.weights = Matrix::from_rows({{1.0, 0.0, 0.0, 0.0},
                                   {0.0, 1.0, 0.0, 0.0},
                                   {-1.0, 0.0, 0.0, 0.0},
                                   {0.0, -1.0, 0.0, 0.0}});
  clf.temperature = 0.25;
  Rng rng(7);
  Matrix cal_f(8, 4, 0.0);
  std::vector<std::int32_t> cal_y(8);
  for (std::size_t i = 0; i < 8; ++i) {
    double a = rng.normal(), b = rng.normal();
    double n = std::sqrt(a * a + b * b);
    cal_f(i, 2) = a / n;
    cal_f(i, 3) = b / n;
    cal_y[i] = static_cast<std::int32_t>(i % 4);  // exactly uniform marginal
  }
  Matrix test_f(6, 4, 0.0);
  for (std::size_t i = 0; i < 6; ++i) {
    double a = rng.normal(), b = rng.normal();
    double n = std::sqrt(a * a + b * b);
    test_f(i, 2) = a / n;
    test_f(i, 3) = b / n;
  }
  EmbeddingSet cal = th::make_set(cal_f, cal_y, 4);
  EmbeddingSet test = th::make_set(test_f, {}, 4);

  SolverConfig solver;
  PipelineResult plain = run_scp(clf, cal, test, lac(), 0.1, 19);
  PipelineResult trans = run_sca_t(clf, cal, test, solver, lac(), 0.1, 19);
  REQUIRE(trans.trace.has_value());
  REQUIRE(trans.trace->final_weights == clf.weights);
  REQUIRE(trans.predictor.threshold == plain.predictor.threshold);
  for (std::size_t i = 0; i < plain.sets.size(); ++i)
    REQUIRE(trans.sets[i].members == plain.sets[i].members);
}

TEST_CASE("swapping which half is calibration leaves the refined weights alone",
          "[pipelines]") {
  // Both halves carry identical label counts, so the marginal prior and the
  // pooled features (up to row order) are the same either way round.
  SynthSpec spec = band_spec(54);
  spec.n_samples = 400;
  SynthTask task = generate(spec);
  std::vector<std::size_t> a_idx, b_idx;
  std::vector<std::size_t> taken(3, 0);
  for (std::size_t i = 0; i < task.pool.size(); ++i) {
    auto y = static_cast<std::size_t>(task.pool.labels[i]);
    if (taken[y] < 10)
      a_idx.push_back(i);
    else if (taken[y] < 20)
      b_idx.push_back(i);
    ++taken[y];
  }
  REQUIRE(a_idx.size() == 30);
  REQUIRE(b_idx.size() == 30);
  auto gather_set = [&](const std::vector<std::size_t>& idx) {
    EmbeddingSet out;
    out.features = gather_rows(task.pool.features, idx);
    for (std::size_t i : idx) out.labels.push_back(task.pool.labels[i]);
    out.num_classes = task.pool.num_classes;
    return out;
  };
  EmbeddingSet a = gather_set(a_idx);
  EmbeddingSet b = gather_set(b_idx);

  SolverConfig solver;
  PipelineResult r1 = run_sca_t(task.zero_shot, a, b.without_labels(), solver, lac(), 0.1, 23);
  PipelineResult r2 = run_sca_t(task.zero_shot, b, a.without_labels(), solver, lac(), 0.1, 23);
  REQUIRE(th::max_rel_err(r1.trace->final_weights, r2.trace->final_weights) <= 1e-6);
  REQUIRE(r1.trace->final_weights == r2.trace->final_weights);
}

TEST_CASE("the reported threshold comes from the refined classifier", "[pipelines]") {
  SplitTask t = make_split(band_spec(55), 40);
  SolverConfig solver;
  PipelineResult r = run_sca_t(t.clf, t.cal, t.test, solver, lac(), 0.1, 29);
  PrototypeClassifier refined;
  refined.weights = r.trace->final_weights;
  refined.temperature = t.clf.temperature;
  ConformalPredictor again =
      fit_conformal(lac(), predict_proba(refined, t.cal), t.cal.labels, 0.1);
  REQUIRE(again.threshold == r.predictor.threshold);
  REQUIRE(r.probs_test == predict_proba(refined, t.test));
}

TEST_CASE("pipeline input validation", "[pipelines]") {
  using Catch::Matchers::ContainsSubstring;
  SplitTask t = make_split(band_spec(56), 20);
  EmbeddingSet unlabeled_cal = t.cal.without_labels();
  REQUIRE_THROWS_WITH(run_scp(t.clf, unlabeled_cal, t.test, lac(), 0.1),
                      ContainsSubstring("labeled"));
  EmbeddingSet labeled_test = t.cal;
  REQUIRE_THROWS_WITH(run_scp(t.clf, t.cal, labeled_test, lac(), 0.1),
                      ContainsSubstring("unlabeled"));
  EmbeddingSet holey = t.cal;
  holey.labels[3] = kAbsentLabel;
  REQUIRE_THROWS_WITH(run_scp(t.clf, holey, t.test, lac(), 0.1),
                      ContainsSubstring("row 3"));
  EmbeddingSet empty;
  empty.num_classes = 3;
  REQUIRE_THROWS_WITH(run_scp(t.clf, empty, t.test, lac(), 0.1),
                      ContainsSubstring("empty"));
  PrototypeClassifier wrong = t.clf;
  wrong.weights = Matrix(3, 5, 0.1);
  REQUIRE_THROWS_AS(run_scp(wrong, t.cal, t.test, lac(), 0.1), DataError);
}

TEST_CASE("strategy names round-trip and reject unknowns", "[pipelines]") {
  using Catch::Matchers::ContainsSubstring;
  for (StrategyKind k : {StrategyKind::Scp, StrategyKind::AdaptScp, StrategyKind::ScaT,
                         StrategyKind::ScaTTim})
    REQUIRE(parse_strategy(to_string(k)) == k);
  REQUIRE_THROWS_WITH(parse_strategy("SCA"), ContainsSubstring("SCA_T"));
  REQUIRE_THROWS_AS(parse_strategy(""), ConfigError);
}

TEST_CASE("run_strategy forces the matching objective", "[pipelines]") {
  SplitTask t = make_split(band_spec(57), 30);
  StrategyConfig cfg;
  cfg.strategy = StrategyKind::ScaTTim;
  cfg.scorer = lac();
  cfg.solver.objective = Objective::KlPrior;  // overridden by the strategy
  PipelineResult tim = run_strategy(cfg, t.clf, t.cal, t.test, 31);
  cfg.solver.objective = Objective::Tim;
  PipelineResult tim2 = run_strategy(cfg, t.clf, t.cal, t.test, 31);
  REQUIRE(tim.trace->final_weights == tim2.trace->final_weights);
}

TEST_CASE("split and transductive runs keep coverage in the guarantee band",
          "[pipelines][band]") {
  // 29 calibration rows at alpha = 0.1: expected coverage in [0.9, 0.9333].
  const int trials = 100;
  double cov_scp = 0.0, cov_sca = 0.0;
  SolverConfig solver;
  solver.iterations = 60;
  for (int t = 0; t < trials; ++t) {
    SplitTask task = make_split(band_spec(9000 + static_cast<std::uint64_t>(t)), 29);
    PipelineResult scp = run_scp(task.clf, task.cal, task.test, lac(), 0.1,
                                 static_cast<std::uint64_t>(t));
    PipelineResult sca = run_sca_t(task.clf, task.cal, task.test, solver, lac(), 0.1,
                                   static_cast<std::uint64_t>(t));
    cov_scp += coverage(scp.sets, task.test_labels);
    cov_sca += coverage(sca.sets, task.test_labels);
  }
  cov_scp /= trials;
  cov_sca /= trials;
  INFO("split " << cov_scp << " transductive " << cov_sca);
  REQUIRE(cov_scp >= 0.9 - 0.016);
  REQUIRE(cov_scp <= 0.9 + 1.0 / 30.0 + 0.016);
  REQUIRE(cov_sca >= 0.9 - 0.016);
  REQUIRE(cov_sca <= 0.9 + 1.0 / 30.0 + 0.016);
}

TEST_CASE("calibrating on probe training data undershoots coverage",
          "[pipelines][band]") {
  // High dimension, few labeled rows: the probe separates its own training
  // set almost perfectly, the threshold tightens, and fresh rows fall out.
  SynthSpec spec;
  spec.num_classes = 4;
  spec.dim = 256;
  spec.concentration = 1.0;
  spec.prototype_perturbation = 0.3;
  spec.temperature = 0.25;
  spec.n_samples = 32 + 250;
  const int trials = 40;
  ProbeConfig probe;
  double cov = 0.0;
  for (int t = 0; t < trials; ++t) {
    spec.seed = 7000 + static_cast<std::uint64_t>(t);
    SplitTask task = make_split(spec, 32);
    PipelineResult r = run_adapt_scp(task.clf, task.cal, task.test, probe, lac(), 0.1,
                                     static_cast<std::uint64_t>(t));
    cov += coverage(r.sets, task.test_labels);
  }
  cov /= trials;
  INFO("mean coverage " << cov);
  REQUIRE(cov < 0.895);
}
