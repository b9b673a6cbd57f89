#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "fraudability/detector.hpp"
#include "fraudability/lof.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fraudability;

namespace {

GenerationConfig small_config(std::size_t users) {
  GenerationConfig c = default_generation_config();
  c.num_users = users;
  return c;
}

void zero_parameters(SurrogateDetector& d) {
  for (auto* p : d.model().parameters()) std::fill(p->value.values.begin(), p->value.values.end(), 0.0);
}

SurrogateDetector tiny_detector(std::size_t n = 4, std::uint64_t seed = 1) {
  Dataset ds = generate_dataset(small_config(5), 3);
  DetectorConfig cfg;
  cfg.window = n;
  cfg.layers = {6, 3, 6};
  return SurrogateDetector(fit_encoder(ds, 2, 3), cfg, seed);
}

std::vector<double> random_window(Rng& rng, std::size_t size) {
  std::vector<double> w(size);
  for (double& x : w) x = uniform01(rng);
  return w;
}

}  // namespace

TEST(Reconstruction, ZeroWeightsReconstructZero) {
  SurrogateDetector d = tiny_detector();
  zero_parameters(d);
  Rng rng(1);
  auto w = random_window(rng, 4 * d.encoder().width());
  double norm = 0.0;
  for (double x : w) norm += x * x;
  EXPECT_NEAR(d.reconstruction_error(w), norm, 1e-12);
}

TEST(Reconstruction, NonNegativeAndDeterministic) {
  SurrogateDetector d = tiny_detector();
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    auto w = random_window(rng, 4 * d.encoder().width());
    const double e = d.reconstruction_error(w);
    EXPECT_GE(e, 0.0);
    EXPECT_EQ(e, d.reconstruction_error(w));
  }
}

TEST(Reconstruction, BatchEqualsSingle) {
  SurrogateDetector d = tiny_detector();
  Rng rng(3);
  const std::size_t sz = 4 * d.encoder().width();
  std::vector<double> all;
  std::vector<double> singles;
  for (int k = 0; k < 5; ++k) {
    auto w = random_window(rng, sz);
    singles.push_back(d.reconstruction_error(w));
    all.insert(all.end(), w.begin(), w.end());
  }
  auto batch = d.reconstruction_errors(all, 5);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(batch[k], singles[k], 1e-12);
}

TEST(Reconstruction, ShapeMismatchRejected) {
  SurrogateDetector d = tiny_detector();
  std::vector<double> w(3, 0.0);
  EXPECT_THROW(d.reconstruction_error(w), Error);
}

TEST(Reconstruction, BottleneckMustBeNarrowerThanInput) {
  Dataset ds = generate_dataset(small_config(3), 3);
  FeatureEncoder enc = fit_encoder(ds, 2, 3);  // width 11
  DetectorConfig cfg;
  cfg.window = 2;
  cfg.layers = {8, 22, 8};
  EXPECT_THROW(SurrogateDetector(enc, cfg, 1), Error);
  cfg.layers = {8, 21, 8};
  EXPECT_NO_THROW(SurrogateDetector(enc, cfg, 1));
  cfg.layers = {8, 4};
  EXPECT_THROW(SurrogateDetector(enc, cfg, 1), Error);
}

TEST(ReconstructionGradient, MatchesFiniteDifferences) {
  SurrogateDetector d = tiny_detector(3);
  Rng rng(4);
  const std::size_t sz = 3 * d.encoder().width();
  std::vector<double> w = random_window(rng, 2 * sz);
  std::vector<double> g;
  d.error_gradient(w, 2, g);
  const double h = 1e-5;
  for (std::size_t j = 0; j < w.size(); ++j) {
    auto up = w, down = w;
    up[j] += h;
    down[j] -= h;
    auto eu = d.reconstruction_errors(up, 2), ed = d.reconstruction_errors(down, 2);
    const double numeric = (eu[0] + eu[1] - ed[0] - ed[1]) / (2 * h);
    EXPECT_NEAR(g[j], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
  }
}

TEST(Threshold, NearestRankOfOneToHundred) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  std::reverse(v.begin(), v.end());
  EXPECT_EQ(nearest_rank_quantile(v, 0.95), oracle::nearest_rank(v, 0.95));
  EXPECT_EQ(nearest_rank_quantile(v, 0.95), 95.0);
  EXPECT_THROW(nearest_rank_quantile(v, 1.0), Error);
  EXPECT_THROW(nearest_rank_quantile(v, 0.0), Error);
  EXPECT_EQ(nearest_rank_quantile(std::vector<double>(100, 2.5), 0.99), 2.5);
}

TEST(Threshold, AgreesWithRankOracleAndIsMonotoneInQ) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + uniform_index(rng, 300);
    std::vector<double> v(m);
    for (double& x : v) x = std::floor(uniform(rng, 0.0, 50.0));
    double prev = -INFINITY;
    for (double q = 0.01; q < 1.0; q += 0.07) {
      const double a = nearest_rank_quantile(v, q);
      EXPECT_EQ(a, oracle::nearest_rank(v, q));
      EXPECT_GE(a, prev);
      prev = a;
    }
  }
}

TEST(Threshold, CalibrationNeedsEnoughWindows) {
  SurrogateDetector d = tiny_detector();
  WindowSet ws{4, d.encoder().width(), 99, std::vector<double>(99 * 4 * d.encoder().width(), 0.1), {}, {}};
  EXPECT_THROW(calibrate_threshold(d, ws, 0.9), Error);
  ws.count = 100;
  ws.values.resize(100 * 4 * d.encoder().width(), 0.1);
  EXPECT_THROW(calibrate_threshold(d, ws, 1.0), Error);
  calibrate_threshold(d, ws, 0.9);
  EXPECT_GT(d.threshold(), 0.0);
}

TEST(Classify, StrictInequalityAtThreshold) {
  SurrogateDetector d = tiny_detector();
  Rng rng(6);
  auto w = random_window(rng, 4 * d.encoder().width());
  EXPECT_THROW(classify_window(d, w), Error);
  const double e = d.reconstruction_error(w);
  d.set_threshold(e, 0.99);
  EXPECT_EQ(classify_window(d, w), Verdict::benign);
  d.set_threshold(std::nextafter(e, 0.0), 0.99);
  EXPECT_EQ(classify_window(d, w), Verdict::fraud);

  zero_parameters(d);
  std::vector<double> zeros(w.size(), 0.0);
  EXPECT_EQ(d.reconstruction_error(zeros), 0.0);
  EXPECT_EQ(classify_window(d, zeros), Verdict::benign);
}

TEST(Classify, RaisingThresholdNeverCreatesFraud) {
  SurrogateDetector d = tiny_detector();
  Rng rng(7);
  for (int k = 0; k < 50; ++k) {
    auto w = random_window(rng, 4 * d.encoder().width());
    const double a = uniform(rng, 0.1, 5.0), b = a + uniform(rng, 0.0, 5.0);
    d.set_threshold(a, 0.9);
    const Verdict low = classify_window(d, w);
    d.set_threshold(b, 0.9);
    if (low == Verdict::benign) EXPECT_EQ(classify_window(d, w), Verdict::benign);
  }
}

TEST(Detection, FigureFourCase) {
  // n = 3, i = 2 in a history of 5: windows at time units 0,1,2 start at 0,1,2.
  std::map<std::size_t, bool> by_unit{{0, false}, {1, false}, {2, true}};
  auto out = detect_transaction(5, 2, 3, [&](std::size_t s) { return by_unit.at(s + 3 - 1 - 2); });
  EXPECT_TRUE(out.detected);
  EXPECT_EQ(out.detection_time, 2u);
}

TEST(Detection, AllBenignIsUndetectedAtN) {
  auto out = detect_transaction(30, 12, 10, [](std::size_t) { return false; });
  EXPECT_FALSE(out.detected);
  EXPECT_EQ(out.detection_time, 10u);
}

TEST(Detection, FirstWindowFraudIsTimeZero) {
  auto out = detect_transaction(30, 12, 10, [](std::size_t) { return true; });
  EXPECT_TRUE(out.detected);
  EXPECT_EQ(out.detection_time, 0u);
}

TEST(Detection, NoFullWindowIsAnError) {
  EXPECT_THROW(detect_transaction(3, 1, 5, [](std::size_t) { return false; }), Error);
  EXPECT_THROW(detect_transaction(10, 10, 5, [](std::size_t) { return false; }), Error);
}

TEST(Detection, MatchesBruteForceEnumeration) {
  Rng rng(8);
  for (std::size_t n : {3u, 5u, 10u}) {
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t len = n + uniform_index(rng, 3 * n);
      const std::size_t i = uniform_index(rng, len);
      std::vector<bool> script(len);
      for (std::size_t s = 0; s < len; ++s) script[s] = uniform01(rng) < 0.3;
      auto expected = oracle::detect(len, i, n, script);
      auto got = detect_transaction(len, i, n, [&](std::size_t s) { return static_cast<bool>(script[s]); });
      EXPECT_EQ(got.detected, expected.first);
      EXPECT_EQ(got.detection_time, expected.second);
    }
  }
}

TEST(Detection, DetectorPathAgreesWithScriptedPath) {
  SurrogateDetector d = tiny_detector(4);
  Dataset ds = generate_dataset(small_config(1), 9);
  EncodedHistory h = d.encoder().encode_history(ds.users[0]);
  std::vector<double> errs;
  for (std::size_t s = 0; s + 4 <= h.rows; ++s) errs.push_back(d.reconstruction_error({h.data.data() + s * h.width, 4 * h.width}));
  std::vector<double> sorted = errs;
  std::sort(sorted.begin(), sorted.end());
  d.set_threshold(sorted[sorted.size() / 2], 0.5);
  for (std::size_t i = 0; i < h.rows; ++i) {
    auto a = detect_transaction(d, h, i, 1.0);
    auto b = detect_transaction(h.rows, i, 4, [&](std::size_t s) { return errs[s] > d.threshold(); });
    EXPECT_EQ(a.detected, b.detected);
    EXPECT_EQ(a.detection_time, b.detection_time);
    auto c = detect_injected(d, ds.users[0].transactions, i, 1.0);
    EXPECT_EQ(a, c);
  }
}

TEST(Surrogate, TooShortHistoriesNamed) {
  Dataset ds = generate_dataset(small_config(3), 3);
  ds.users[1].transactions.resize(5);
  DetectorConfig cfg;
  cfg.layers = {8, 4, 8};
  try {
    train_surrogate(ds, fit_encoder(ds, 2, 1), cfg, 1);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(ds.users[1].user_id), std::string::npos) << e.what();
  }
}

TEST(Surrogate, TrainingReducesErrorAndIsDeterministic) {
  Dataset ds = generate_dataset(small_config(12), 21);
  FeatureEncoder enc = fit_encoder(ds, 2, 21);
  DetectorConfig cfg;
  cfg.layers = {16, 6, 16};
  cfg.train.epochs = 8;
  SurrogateDetector a = train_surrogate(ds, enc, cfg, 5);
  ASSERT_EQ(a.train_curve.size(), 8u);
  EXPECT_LT(a.train_curve.back(), 0.7 * a.train_curve.front());
  // Embeddings moved during fine-tuning.
  EXPECT_NE(a.encoder().category_embeddings, enc.category_embeddings);

  SurrogateDetector b = train_surrogate(ds, enc, cfg, 5);
  test::TempDir dir;
  save_detector(a, dir.file("a.json"));
  save_detector(b, dir.file("b.json"));
  EXPECT_EQ(test::slurp(dir.file("a.json")), test::slurp(dir.file("b.json")));
  EXPECT_EQ(test::slurp(dir.file("a.json.meta.json")), test::slurp(dir.file("b.json.meta.json")));
}

TEST(Surrogate, CheckpointRoundTrip) {
  Dataset ds = generate_dataset(small_config(6), 22);
  DetectorConfig cfg;
  cfg.layers = {8, 4, 8};
  cfg.train.epochs = 2;
  SurrogateDetector a = train_surrogate(ds, fit_encoder(ds, 2, 22), cfg, 5);
  WindowSet ws = extract_windows(a.encoder(), ds, cfg.window);
  calibrate_threshold(a, ws, 0.9);
  test::TempDir dir;
  save_detector(a, dir.file("d.json"));
  SurrogateDetector b = load_detector(dir.file("d.json"));
  EXPECT_EQ(a.threshold(), b.threshold());
  EXPECT_EQ(a.reconstruction_errors(ws.values, ws.count), b.reconstruction_errors(ws.values, ws.count));
  EXPECT_THROW(load_detector(dir.file("missing.json")), Error);
}

TEST(Lof, DuplicatedPointHasUnitLof) {
  const std::size_t k = 5;
  std::vector<double> pts;
  for (std::size_t r = 0; r <= k; ++r) pts.insert(pts.end(), {0.3, -1.2, 4.0});
  LofModel m(pts, 3, k);
  const std::vector<double> q{0.3, -1.2, 4.0};
  EXPECT_DOUBLE_EQ(m.score(q), 1.0);
  EXPECT_DOUBLE_EQ(m.training_score(0), 1.0);
}

TEST(Lof, OutlierStandsOut) {
  // Tight 4x5 grid plus one far point.
  std::vector<double> pts;
  for (int r = 0; r < 20; ++r) pts.insert(pts.end(), {0.01 * (r % 4), 0.01 * (r / 4)});
  pts.insert(pts.end(), {5.0, 5.0});
  LofModel m(pts, 2, 3);
  auto brute = oracle::lof_training_scores(pts, 2, 3);
  EXPECT_GT(m.training_score(20), 1.5);
  EXPECT_NEAR(m.training_score(20), brute[20], 1e-9);
  for (std::size_t r = 0; r < 20; ++r) {
    EXPECT_LT(m.training_score(r), 1.2);
    EXPECT_NEAR(m.training_score(r), brute[r], 1e-9);
  }
}

TEST(Lof, KMustBeBelowPointCount) {
  std::vector<double> pts(6, 0.0);
  EXPECT_THROW(LofModel(pts, 2, 3), Error);
  EXPECT_NO_THROW(LofModel(pts, 2, 2));
}

TEST(Lof, MatchesBruteForceOnSmallSets) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 30 + uniform_index(rng, 50), dim = 4;
    std::vector<double> pts(m * dim);
    for (double& x : pts) x = uniform(rng, -1, 1);
    LofModel model(pts, dim, 20);
    auto brute = oracle::lof_training_scores(pts, dim, 20);
    for (std::size_t r = 0; r < m; ++r) EXPECT_NEAR(model.training_score(r), brute[r], 1e-9);
    for (int q = 0; q < 10; ++q) {
      std::vector<double> query(dim);
      for (double& x : query) x = uniform(rng, -1.5, 1.5);
      EXPECT_NEAR(model.score(query), oracle::lof_query_score(pts, dim, 20, query), 1e-9);
    }
  }
}

TEST(Lof, ClassifyAgainstThreshold) {
  Rng rng(12);
  std::vector<double> pts;
  for (int r = 0; r < 30; ++r) pts.insert(pts.end(), {uniform(rng, 0, 1), uniform(rng, 0, 1)});
  LofModel m(pts, 2, 5);
  const std::vector<double> far{10.0, 10.0};
  EXPECT_EQ(lof_classify(m, far, 2.0), Verdict::fraud);
  EXPECT_EQ(lof_classify(m, far, lof_score(m, far)), Verdict::benign);
}
