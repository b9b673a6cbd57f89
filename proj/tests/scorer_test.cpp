#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fraudability/scorer.hpp"
#include "test_util.hpp"

using namespace fraudability;

namespace {

RegressorConfig fast_config() {
  RegressorConfig c;
  c.forest_trees = 20;
  c.boosting_estimators = 30;
  c.boosting_max_depth = 6;
  c.nn_train.epochs = 40;
  return c;
}

std::vector<TrainingExample> random_examples(Rng& rng, std::size_t count, std::size_t width,
                                             const std::function<double(const std::vector<double>&)>& label) {
  std::vector<TrainingExample> out;
  for (std::size_t k = 0; k < count; ++k) {
    TrainingExample e;
    e.user_id = "u" + std::to_string(1000 + k);
    e.features.resize(width);
    for (double& x : e.features) x = uniform01(rng);
    e.label = label(e.features);
    out.push_back(std::move(e));
  }
  return out;
}

// Recursive walk; independent of RegressionTree::predict's loop.
double walk(const RegressionTree& t, std::size_t node, const std::vector<double>& x) {
  const auto& n = t.nodes[node];
  if (n.feature < 0) return n.value;
  return walk(t, x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right, x);
}

double oracle_prediction(const Regressor& r, const std::vector<double>& x) {
  double s = 0.0;
  for (const auto& t : r.trees) s += walk(t, 0, x);
  const double raw = r.kind == RegressorKind::random_forest ? s / static_cast<double>(r.trees.size())
                                                            : r.base + r.config.boosting_learning_rate * s;
  return std::min(1.0, std::max(0.0, raw));
}

// Ridge with an unpenalized intercept by Gaussian elimination on the
// augmented normal equations [1 X]^T [1 X] + diag(0, lambda, ...).
std::vector<double> ridge_oracle(const std::vector<TrainingExample>& ex, double lambda) {
  const std::size_t d = ex.front().features.size() + 1;
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
  for (const auto& e : ex) {
    std::vector<double> z{1.0};
    z.insert(z.end(), e.features.begin(), e.features.end());
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) a[i][j] += z[i] * z[j];
      a[i][d] += z[i] * e.label;
    }
  }
  for (std::size_t i = 1; i < d; ++i) a[i][i] += lambda;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= d; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> beta(d);
  for (std::size_t i = 0; i < d; ++i) beta[i] = a[i][d] / a[i][i];
  return beta;  // intercept first
}

}  // namespace

TEST(Regressor, ConstantLabelsAreReproducedByEveryKind) {
  Rng rng(1);
  const double c = 0.37;
  const auto ex = random_examples(rng, 30, 6, [&](const auto&) { return c; });
  for (RegressorKind k : kAllRegressors) {
    const Regressor r = train_regressor(k, ex, fast_config(), 5);
    for (const auto& e : ex) EXPECT_NEAR(r.predict(e.features), c, 1e-6) << to_string(k);
    EXPECT_NEAR(r.training_mae, 0.0, 1e-6);
  }
}

TEST(Regressor, RidgeRecoversALine) {
  Rng rng(2);
  auto ex = random_examples(rng, 50, 1, [](const auto& x) { return 3.0 * x[0] + 1.0; });
  RegressorConfig cfg;
  cfg.ridge_lambda = 1e-3;
  const Regressor r = train_regressor(RegressorKind::ridge, ex, cfg, 1);
  EXPECT_NEAR(r.weights[0], 3.0, 0.1);
  EXPECT_NEAR(r.intercept, 1.0, 0.1);
}

TEST(Regressor, RidgeMatchesTheClosedForm) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ex = random_examples(rng, 40, 4, [&](const auto& x) {
      return 0.2 + 0.3 * x[0] - 0.1 * x[1] + 0.05 * x[3] + 0.01 * uniform01(rng);
    });
    RegressorConfig cfg;
    cfg.ridge_lambda = 0.1 * (trial + 1);
    const Regressor r = train_regressor(RegressorKind::ridge, ex, cfg, 1);
    const auto beta = ridge_oracle(ex, cfg.ridge_lambda);
    EXPECT_NEAR(r.intercept, beta[0], 1e-6);
    for (std::size_t j = 0; j < r.weights.size(); ++j) EXPECT_NEAR(r.weights[j], beta[j + 1], 1e-6);
  }
}

TEST(Regressor, SingleDepthZeroTreeIsTheGlobalMean) {
  Rng rng(4);
  const auto ex = random_examples(rng, 25, 3, [](const auto& x) { return x[0] * x[1]; });
  RegressorConfig cfg;
  cfg.forest_trees = 1;
  cfg.forest_max_depth = 0;
  const Regressor r = train_regressor(RegressorKind::random_forest, ex, cfg, 1);
  double mean = 0.0;
  for (const auto& e : ex) mean += e.label;
  mean /= static_cast<double>(ex.size());
  for (const auto& e : ex) EXPECT_NEAR(r.predict(e.features), mean, 1e-12);
}

TEST(Regressor, TreeModelsMatchARecursiveWalk) {
  Rng rng(5);
  const auto ex = random_examples(rng, 80, 10, [](const auto& x) { return std::clamp(x[0] - x[3] * x[4] + 0.3, 0.0, 1.0); });
  for (RegressorKind k : {RegressorKind::random_forest, RegressorKind::gradient_boosting}) {
    const Regressor r = train_regressor(k, ex, fast_config(), 9);
    Rng q(6);
    for (int p = 0; p < 50; ++p) {
      std::vector<double> x(10);
      for (double& v : x) v = uniform(q, -0.2, 1.2);
      EXPECT_NEAR(r.predict(x), oracle_prediction(r, x), 1e-9) << to_string(k);
    }
  }
}

TEST(Regressor, PredictionsAreClampedToUnitInterval) {
  Rng rng(7);
  const auto ex = random_examples(rng, 30, 1, [](const auto& x) { return x[0]; });
  const Regressor r = train_regressor(RegressorKind::ridge, ex, RegressorConfig{}, 1);
  const double far = (1.4 - r.intercept) / r.weights[0];
  EXPECT_NEAR(r.predict_raw(std::vector<double>{far}), 1.4, 1e-9);
  EXPECT_EQ(r.predict(std::vector<double>{far}), 1.0);
  EXPECT_EQ(r.predict(std::vector<double>{-far}), 0.0);
  for (RegressorKind k : kAllRegressors) {
    const Regressor m = train_regressor(k, ex, fast_config(), 2);
    for (double v : {-5.0, -0.5, 0.3, 2.0, 9.0}) {
      const double s = m.predict(std::vector<double>{v});
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(Regressor, DeterministicPerSeed) {
  Rng rng(8);
  const auto ex = random_examples(rng, 40, 5, [](const auto& x) { return x[1]; });
  for (RegressorKind k : kAllRegressors) {
    const Regressor a = train_regressor(k, ex, fast_config(), 3);
    const Regressor b = train_regressor(k, ex, fast_config(), 3);
    for (const auto& e : ex) {
      EXPECT_EQ(a.predict(e.features), b.predict(e.features));
      EXPECT_EQ(a.predict(e.features), a.predict(e.features));
    }
  }
}

TEST(Regressor, RejectsBadInputs) {
  Rng rng(9);
  auto ex = random_examples(rng, 12, 3, [](const auto&) { return 0.5; });
  EXPECT_THROW(train_regressor(RegressorKind::ridge, std::span(ex).first(5), RegressorConfig{}, 1), Error);
  const Regressor r = train_regressor(RegressorKind::ridge, ex, RegressorConfig{}, 1);
  EXPECT_THROW(r.predict(std::vector<double>{0.1, 0.2}), Error);
  ex[4].features.push_back(0.0);
  try {
    train_regressor(RegressorKind::random_forest, ex, RegressorConfig{}, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::shape);
  }
}

TEST(Regressor, ForestBeatsTheMeanBaselineOnHeldOutExamples) {
  Rng rng(10);
  const auto ex = random_examples(rng, 200, 8, [&](const auto& x) {
    return std::clamp(0.6 * x[0] + 0.3 * x[1] * x[2] + 0.05 * uniform01(rng), 0.0, 1.0);
  });
  auto [train, test] = split_examples(ex, 0.25, 4);
  double mean = 0.0;
  for (const auto& e : train) mean += e.label;
  mean /= static_cast<double>(train.size());
  const Regressor r = train_regressor(RegressorKind::random_forest, train, RegressorConfig{}, 1);
  EXPECT_LT(evaluate_regressor(r, test), mean_baseline_mae(mean, test));
}

TEST(Regressor, SaveLoadRoundTrip) {
  Rng rng(11);
  const auto ex = random_examples(rng, 30, 4, [](const auto& x) { return x[2]; });
  test::TempDir dir;
  for (RegressorKind k : kAllRegressors) {
    Regressor r = train_regressor(k, ex, fast_config(), 6);
    const auto path = dir.file(to_string(k) + ".json");
    save_regressor(r, path);
    const Regressor back = load_regressor(path);
    EXPECT_EQ(back.kind, k);
    for (const auto& e : ex) EXPECT_EQ(back.predict(e.features), r.predict(e.features)) << to_string(k);
  }
  EXPECT_THROW(load_regressor(dir.file("missing.json")), Error);
}

TEST(Ranking, SortsDescendingWithIdTieBreak) {
  const auto r = rank_scores({{"b", 0.1}, {"a", 0.9}, {"c", 0.5}, {"e", 0.5}, {"d", 0.5}});
  const std::vector<std::string> ids{"a", "c", "d", "e", "b"};
  for (std::size_t k = 0; k < ids.size(); ++k) EXPECT_EQ(r[k].user_id, ids[k]);
  EXPECT_THROW(rank_scores({}), Error);
}

TEST(Ranking, InvariantUnderIncreasingTransforms) {
  Rng rng(12);
  std::vector<RankedUser> users;
  for (int k = 0; k < 200; ++k) users.push_back({"u" + std::to_string(k), std::floor(uniform01(rng) * 50) / 50});
  const auto base = rank_scores(users);
  for (auto f : {+[](double s) { return std::exp(3 * s); }, +[](double s) { return s * s * s + 2; },
                 +[](double s) { return std::log1p(s); }}) {
    auto t = users;
    for (auto& u : t) u.score = f(u.score);
    const auto ranked = rank_scores(t);
    for (std::size_t k = 0; k < base.size(); ++k) ASSERT_EQ(ranked[k].user_id, base[k].user_id);
  }
}

TEST(Evaluation, PerfectPredictorHasZeroError) {
  Rng rng(13);
  const auto ex = random_examples(rng, 20, 2, [](const auto&) { return 0.25; });
  const Regressor r = train_regressor(RegressorKind::gradient_boosting, ex, fast_config(), 1);
  EXPECT_NEAR(evaluate_regressor(r, ex), 0.0, 1e-12);
  EXPECT_NEAR(mean_baseline_mae(0.25, ex), 0.0, 1e-15);
}

TEST(Profiles, ExamplesAndCsv) {
  GenerationConfig g = default_generation_config();
  g.num_users = 12;
  const Dataset ds = generate_dataset(g, 3);
  const FeatureEncoder enc = fit_encoder(ds, 4, 3);
  const auto profiles = build_profiles(enc, ds);
  ASSERT_EQ(profiles.size(), 12u);
  EXPECT_EQ(profiles.begin()->second.size(), 5 * enc.width());
  std::map<std::string, double> labels;
  for (const auto& [id, p] : profiles) labels[id] = 0.5;
  labels["nobody"] = 0.1;
  EXPECT_EQ(make_examples(profiles, labels).size(), 12u);
  labels[profiles.begin()->first] = 1.5;
  EXPECT_THROW(make_examples(profiles, labels), Error);

  const auto csv = scores_csv(rank_scores({{"x", 0.25}, {"y", 0.75}}));
  EXPECT_EQ(csv, "user_id,predicted_score\ny,0.75\nx,0.25\n");
  const std::map<std::string, double> actual{{"x", 0.5}};
  EXPECT_EQ(scores_csv(rank_scores({{"x", 0.25}, {"y", 0.75}}), &actual),
            "user_id,predicted_score,actual_label\ny,0.75,\nx,0.25,0.5\n");
}

TEST(Monitoring, OneRowPerDurationAndFullHistoryMatchesPipeline) {
  GenerationConfig g = default_generation_config();
  g.num_users = 40;
  const Dataset ds = generate_dataset(g, 5);
  const FeatureEncoder enc = fit_encoder(ds, 4, 5);
  std::map<std::string, double> labels;
  Rng rng(14);
  for (const auto& u : ds.users) labels[u.user_id] = uniform01(rng);
  const double full = 1e12;
  const std::vector<double> durations{7 * 86400.0, 30 * 86400.0, full};
  RegressorConfig cfg = fast_config();
  const auto curve = monitoring_curve(enc, ds, labels, durations, RegressorKind::random_forest, cfg, 0.25, 7);
  ASSERT_EQ(curve.size(), durations.size());
  for (std::size_t k = 0; k < curve.size(); ++k) {
    EXPECT_EQ(curve[k].duration_seconds, durations[k]);
    EXPECT_EQ(curve[k].users + curve[k].dropped_users, ds.users.size());
  }
  EXPECT_GT(curve[0].dropped_users, 0u);
  EXPECT_EQ(curve[2].dropped_users, 0u);

  // The full-history point equals training on the whole profiles with the same split.
  const auto again = monitoring_curve(enc, ds, labels, std::vector<double>{full}, RegressorKind::random_forest, cfg, 0.25, 7);
  EXPECT_EQ(again[0].mae, curve[2].mae);
}
