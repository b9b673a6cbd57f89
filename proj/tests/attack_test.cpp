#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fraudability/attack.hpp"
#include "test_util.hpp"

using namespace fraudability;

namespace {

struct Models {
  Dataset data;
  SurrogateDetector surrogate;
  Forecaster forecaster;
};

// Small but trained models, built once for the whole binary.
const Models& models() {
  static const Models m = [] {
    Models out;
    GenerationConfig g = default_generation_config();
    g.num_users = 40;
    out.data = generate_dataset(g, 11);
    DetectorConfig dc;
    dc.layers = {16, 4, 16};
    dc.train.epochs = 4;
    out.surrogate = train_surrogate(out.data, fit_encoder(out.data, 3, 11), dc, 11);
    calibrate_threshold(out.surrogate, extract_windows(out.surrogate.encoder(), out.data, dc.window), 0.9);
    ForecasterConfig fc;
    fc.hidden = {8};
    fc.train.epochs = 3;
    out.forecaster = train_forecaster(out.data, out.surrogate.encoder(), fc, 11);
    return out;
  }();
  return m;
}

PerturbationMask all_mask(std::size_t size, bool unit = true) {
  return {std::vector<std::uint8_t>(size, 1), std::vector<std::uint8_t>(size, unit ? 1 : 0)};
}

std::vector<double> random_window(Rng& rng, std::size_t size) {
  std::vector<double> w(size);
  for (double& x : w) x = uniform01(rng);
  return w;
}

std::vector<std::size_t> immutable_coordinates(const FeatureEncoder& enc) {
  std::vector<std::size_t> out;
  const auto mask = enc.mutable_mask();
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (!mask[j]) out.push_back(j);
  return out;
}

Candidate craft(Strategy s, const UserHistory& u, std::size_t i, const AttackConfig& cfg = {}) {
  const auto& m = models();
  const std::span<const Transaction> h = u.transactions;
  Rng rng(derive_seed(5, i));
  switch (s) {
    case Strategy::pure_random: return craft_pure_random(rng, m.surrogate.encoder(), h, i);
    case Strategy::predicted_amount: return craft_predicted_amount(m.forecaster, m.surrogate.encoder(), h, i);
    default: {
      const Candidate start = craft_predicted_amount(m.forecaster, m.surrogate.encoder(), h, i);
      return craft_adversarial(start.transaction, h, i, m.surrogate, objective_of(s), cfg);
    }
  }
}

}  // namespace

TEST(Fgsm, ToyQuadraticLoss) {
  // loss (x - 0.5)^2 has gradient 2 (x - 0.5) = 0.8 at x = 0.9.
  const double x0[] = {0.9};
  const double grad[] = {2.0 * (0.9 - 0.5)};
  const auto x = fgsm(x0, grad, all_mask(1), 0.2, PerturbationForm::multiplicative);
  EXPECT_NEAR(x[0], 0.72, 1e-12);
}

TEST(Fgsm, AdditiveForm) {
  const double x0[] = {0.9, 0.1};
  const double grad[] = {0.8, -3.0};
  const auto x = fgsm(x0, grad, all_mask(2), 0.2, PerturbationForm::additive);
  EXPECT_NEAR(x[0], 0.7, 1e-12);
  EXPECT_NEAR(x[1], 0.3, 1e-12);
}

TEST(Fgsm, ZeroGradientIsFixedPoint) {
  Rng rng(3);
  const auto x0 = random_window(rng, 40);
  const std::vector<double> zero(40, 0.0);
  for (double eps : AttackConfig{}.epsilons)
    for (auto form : {PerturbationForm::multiplicative, PerturbationForm::additive}) {
      EXPECT_EQ(fgsm(x0, zero, all_mask(40), eps, form), x0);
      auto flat = [](std::span<const double> x, std::vector<double>& g) { g.assign(x.size(), 0.0); };
      EXPECT_EQ(bim(x0, flat, all_mask(40), eps, eps / 5, 7, form), x0);
    }
}

TEST(Fgsm, MaskAndClampDiscipline) {
  const std::vector<double> x0{0.5, 0.95, 0.02, 0.6};
  const std::vector<double> g{1.0, -1.0, 1.0, -1.0};
  PerturbationMask mask{{0, 1, 1, 1}, {1, 1, 1, 0}};
  const auto x = fgsm(x0, g, mask, 0.9, PerturbationForm::additive);
  EXPECT_EQ(x[0], 0.5);           // not perturbed
  EXPECT_EQ(x[1], 1.0);           // clamped from 1.85
  EXPECT_EQ(x[2], 0.0);           // clamped from -0.88
  EXPECT_NEAR(x[3], 1.5, 1e-12);  // category coordinate, left for projection
}

TEST(Bim, ScheduleIsSevenStepsOfOneFifth) {
  for (double eps : AttackConfig{}.epsilons) {
    const auto s = bim_schedule(eps, AttackConfig{});
    EXPECT_NEAR(s.step, eps / 5.0, 1e-15);
    EXPECT_EQ(s.iterations, 7u);
  }
  AttackConfig fixed;
  fixed.bim_iterations = 3;
  EXPECT_EQ(bim_schedule(0.4, fixed).iterations, 3u);
}

TEST(Bim, SingleIterationWithStepEpsMatchesFgsm) {
  const auto& d = models().surrogate;
  const std::size_t size = d.window() * d.encoder().width();
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x0 = random_window(rng, size);
    PerturbationMask mask{std::vector<std::uint8_t>(size), std::vector<std::uint8_t>(size)};
    for (std::size_t j = 0; j < size; ++j) {
      mask.perturb[j] = uniform01(rng) < 0.5;
      mask.unit_range[j] = uniform01(rng) < 0.8;
    }
    const double eps = uniform(rng, 0.05, 0.95);
    const auto form = trial % 2 ? PerturbationForm::additive : PerturbationForm::multiplicative;
    std::vector<double> g0;
    d.error_gradient(x0, 1, g0);
    const auto a = fgsm(x0, g0, mask, eps, form);
    auto gradient = [&](std::span<const double> x, std::vector<double>& g) { d.error_gradient(x, 1, g); };
    const auto b = bim(x0, gradient, mask, eps, eps, 1, form);
    for (std::size_t j = 0; j < size; ++j) ASSERT_NEAR(a[j], b[j], 1e-9);
  }
}

TEST(Bim, StaysInsideEpsBallAndUnitRange) {
  const auto& d = models().surrogate;
  const std::size_t size = d.window() * d.encoder().width();
  Rng rng(19);
  auto gradient = [&](std::span<const double> x, std::vector<double>& g) { d.error_gradient(x, 1, g); };
  for (int trial = 0; trial < 10; ++trial) {
    const auto x0 = random_window(rng, size);
    for (auto form : {PerturbationForm::multiplicative, PerturbationForm::additive}) {
      const double eps = 0.3;
      const auto x = bim(x0, gradient, all_mask(size), eps, eps / 5, 7, form);
      for (std::size_t j = 0; j < size; ++j) {
        const double radius = form == PerturbationForm::multiplicative ? eps * x0[j] : eps;
        EXPECT_LE(std::abs(x[j] - x0[j]), radius + 1e-12);
        EXPECT_GE(x[j], 0.0);
        EXPECT_LE(x[j], 1.0);
      }
    }
  }
}

TEST(Gradient, SignMatchesFiniteDifferences) {
  const auto& d = models().surrogate;
  const std::size_t size = d.window() * d.encoder().width();
  Rng rng(23);
  std::size_t agree = 0, total = 0;
  for (int trial = 0; trial < 3; ++trial) {
    auto x = random_window(rng, size);
    std::vector<double> g;
    d.error_gradient(x, 1, g);
    for (std::size_t j = 0; j < size; ++j) {
      if (std::abs(g[j]) <= 1e-6) continue;
      const double keep = x[j], h = 1e-4;
      x[j] = keep + h;
      const double up = d.reconstruction_error(x);
      x[j] = keep - h;
      const double down = d.reconstruction_error(x);
      x[j] = keep;
      ++total;
      agree += sign_of(up - down) == sign_of(g[j]);
    }
  }
  ASSERT_GT(total, 50u);
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.95);
}

TEST(Injection, InsertsRowAndKeepsOrder) {
  const auto& u = models().data.users[0];
  const Transaction t = injection_template(u.transactions, 5);
  const auto h = inject(u.transactions, 5, t);
  ASSERT_EQ(h.size(), u.size() + 1);
  EXPECT_EQ(h[5], t);
  EXPECT_EQ(h[4], u.transactions[4]);
  EXPECT_EQ(h[6], u.transactions[5]);
  EXPECT_THROW(injection_template(u.transactions, 0), Error);
  EXPECT_THROW(injection_template(u.transactions, u.size()), Error);
}

TEST(Injection, PlaceTimestampStaysStrictlyBetween) {
  Rng rng(29);
  for (int k = 0; k < 2000; ++k) {
    const std::int64_t prev = 1262304000 + static_cast<std::int64_t>(uniform_index(rng, 10'000'000));
    const std::int64_t next = prev + 2 + static_cast<std::int64_t>(uniform_index(rng, k % 2 ? 500 : 900'000));
    const auto sod = static_cast<std::int64_t>(uniform_index(rng, 86400));
    const auto ts = place_timestamp(prev, next, sod);
    ASSERT_GT(ts, prev);
    ASSERT_LT(ts, next);
    if (next - prev > 86400 + 2) EXPECT_EQ(((ts % 86400) + 86400) % 86400, sod);
  }
  EXPECT_EQ(place_timestamp(100, 101, 5), 100);
}

TEST(PureRandom, DeterministicPerSeed) {
  const auto& m = models();
  const auto& u = m.data.users[1];
  Rng a(99), b(99);
  const auto x = craft_pure_random(a, m.surrogate.encoder(), u.transactions, 7);
  const auto y = craft_pure_random(b, m.surrogate.encoder(), u.transactions, 7);
  EXPECT_EQ(x.transaction, y.transaction);
  EXPECT_EQ(x.encoded, y.encoded);
}

TEST(PureRandom, KeepsImmutableFieldsOfTheVictim) {
  const auto& m = models();
  Rng rng(7);
  for (const auto& u : m.data.users) {
    const auto c = craft_pure_random(rng, m.surrogate.encoder(), u.transactions, 3);
    EXPECT_EQ(c.transaction.age, u.transactions[2].age);
    EXPECT_EQ(c.transaction.payment_type, u.transactions[2].payment_type);
    EXPECT_EQ(c.transaction.ip_hash, u.transactions[2].ip_hash);
    EXPECT_EQ(c.transaction.user_id, u.user_id);
  }
}

TEST(PureRandom, CoversTheFittedAmountRange) {
  const auto& m = models();
  const auto& enc = m.surrogate.encoder();
  const auto& u = m.data.users[2];
  Rng rng(31);
  double lo = INFINITY, hi = -INFINITY;
  std::set<int> categories;
  for (int k = 0; k < 1000; ++k) {
    const auto c = craft_pure_random(rng, enc, u.transactions, 4);
    lo = std::min(lo, c.transaction.amount);
    hi = std::max(hi, c.transaction.amount);
    categories.insert(c.transaction.category_id);
  }
  EXPECT_GE((hi - lo) / (enc.amount_max - enc.amount_min), 0.9);
  EXPECT_EQ(categories.size(), static_cast<std::size_t>(enc.num_categories));
}

TEST(Forecaster, LearnsAConstantSequence) {
  const auto& m = models();
  Dataset constant = m.data;
  const double c = 50.0;
  for (auto& u : constant.users)
    for (auto& t : u.transactions) t.amount = c;
  ForecasterConfig fc;
  fc.hidden = {8};
  fc.train.epochs = 20;
  const Forecaster f = train_forecaster(constant, m.surrogate.encoder(), fc, 3);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto& u = constant.users[k];
    EXPECT_NEAR(f.predict_amount(u.transactions, 15), c, 0.1 * c);
  }
}

TEST(Forecaster, BeatsTheGlobalMeanOnHeldOutUsers) {
  const auto& m = models();
  GenerationConfig g = default_generation_config();
  g.num_users = 20;
  const Dataset held = generate_dataset(g, 12);
  double mean = 0.0, count = 0.0;
  for (const auto& u : m.data.users)
    for (const auto& t : u.transactions) {
      mean += t.amount;
      count += 1.0;
    }
  mean /= count;
  ForecasterConfig fc;
  fc.hidden = {16};
  fc.train.epochs = 15;
  const Forecaster f = train_forecaster(m.data, m.surrogate.encoder(), fc, 4);
  double err = 0.0, base = 0.0;
  for (const auto& u : held.users)
    for (std::size_t i = 1; i < u.size(); ++i) {
      err += std::abs(f.predict_amount(u.transactions, i) - u.transactions[i].amount);
      base += std::abs(mean - u.transactions[i].amount);
    }
  EXPECT_LT(err, base);
}

TEST(Forecaster, NeedsOnePrecedingTransaction) {
  const auto& m = models();
  EXPECT_THROW(m.forecaster.predict_amount(m.data.users[0].transactions, 0), Error);
}

TEST(Forecaster, SaveLoadRoundTrip) {
  const auto& m = models();
  test::TempDir dir;
  Forecaster f = m.forecaster;
  save_forecaster(f, dir.file("f.json"));
  const Forecaster g = load_forecaster(dir.file("f.json"));
  const auto& u = m.data.users[3];
  EXPECT_EQ(f.predict_amount(u.transactions, 12), g.predict_amount(u.transactions, 12));
  EXPECT_THROW(load_forecaster(dir.file("missing.json")), Error);
}

TEST(Candidates, MaskDisciplineAndOrderingForEveryStrategy) {
  const auto& m = models();
  const auto& enc = m.surrogate.encoder();
  const auto immutable = immutable_coordinates(enc);
  for (Strategy s : kAllStrategies)
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& u = m.data.users[k];
      for (std::size_t i : {std::size_t{1}, std::size_t{9}, u.size() - m.surrogate.window()}) {
        const Candidate c = craft(s, u, i);
        const auto tmpl = encode_injected(enc, u.transactions, i, injection_template(u.transactions, i));
        for (std::size_t j : immutable) EXPECT_EQ(c.encoded[j], tmpl[j]) << to_string(s) << " coord " << j;
        EXPECT_EQ(c.encoded, encode_injected(enc, u.transactions, i, c.transaction));
        EXPECT_GE(c.transaction.amount, 0.0);
        EXPECT_GE(c.transaction.timestamp, u.transactions[i - 1].timestamp);
        EXPECT_LE(c.transaction.timestamp, u.transactions[i].timestamp);
        for (std::size_t j = 0; j < c.encoded.size(); ++j)
          if (j == enc.amount_index() || (j >= enc.age_index() && j < enc.log_gap_index())) {
            EXPECT_GE(c.encoded[j], 0.0);
            EXPECT_LE(c.encoded[j], 1.0);
          }
      }
    }
}

TEST(Adversarial, PoolStartsWithTheUnperturbedCandidate) {
  const auto& m = models();
  const auto& u = m.data.users[4];
  const auto t = craft_predicted_amount(m.forecaster, m.surrogate.encoder(), u.transactions, 6).transaction;
  const AttackConfig cfg;
  const auto pool = adversarial_pool(m.surrogate, u.transactions, 6, t, cfg);
  ASSERT_EQ(pool.size(), cfg.epsilons.size() + 1);
  EXPECT_EQ(pool[0].transaction, t);
  EXPECT_EQ(pool[0].epsilon, 0.0);
  for (std::size_t k = 1; k < pool.size(); ++k) EXPECT_EQ(pool[k].epsilon, cfg.epsilons[k - 1]);
  for (const auto& c : pool) {
    ASSERT_TRUE(c.surrogate.has_value());
    EXPECT_EQ(*c.surrogate, surrogate_outcome(m.surrogate, u.transactions, 6, c.transaction));
  }
}

TEST(Adversarial, DecodingAnUnmovedRowKeepsTheTransaction) {
  const auto& m = models();
  const auto& enc = m.surrogate.encoder();
  const auto& u = m.data.users[5];
  const Transaction t = injection_template(u.transactions, 8);
  const auto row = encode_injected(enc, u.transactions, 8, t);
  EXPECT_EQ(detail::decode_row(enc, u.transactions, 8, t, row, row), t);
}

TEST(Adversarial, LateDetectIsNoEarlierThanTheStart) {
  const auto& m = models();
  for (auto algorithm : {AdversarialAlgorithm::fgsm, AdversarialAlgorithm::bim}) {
    AttackConfig cfg;
    cfg.algorithm = algorithm;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& u = m.data.users[k];
      for (std::size_t i = 2; i < u.size() - m.surrogate.window(); i += 7) {
        const auto t = craft_predicted_amount(m.forecaster, m.surrogate.encoder(), u.transactions, i).transaction;
        const auto base = surrogate_outcome(m.surrogate, u.transactions, i, t);
        const auto late = craft_adversarial(t, u.transactions, i, m.surrogate, Objective::late_detection, cfg);
        EXPECT_GE(late.surrogate->detection_time, base.detection_time);
        const auto profit = craft_adversarial(t, u.transactions, i, m.surrogate, Objective::max_profit, cfg);
        if (!base.detected) EXPECT_FALSE(profit.surrogate->detected);
        if (!profit.surrogate->detected) EXPECT_GE(profit.transaction.amount, base.detected ? 0.0 : t.amount);
      }
    }
  }
}

TEST(Adversarial, SelectionTieBreaks) {
  auto cand = [](double eps, double amount, bool detected, std::size_t time) {
    Candidate c;
    c.epsilon = eps;
    c.transaction.amount = amount;
    c.surrogate = DetectionOutcome{detected, time, amount};
    return c;
  };
  const std::vector<Candidate> pool{cand(0.0, 10, true, 3), cand(0.1, 30, true, 7), cand(0.2, 20, false, 10),
                                    cand(0.3, 20, false, 10), cand(0.4, 5, false, 10)};
  const auto late = select_candidate(pool, Objective::late_detection);
  EXPECT_EQ(late.epsilon, 0.2);  // time 10, amount 20 beats 5; smaller eps wins the tie
  const auto profit = select_candidate(pool, Objective::max_profit);
  EXPECT_EQ(profit.epsilon, 0.2);  // 30 is larger but detected
  const std::vector<Candidate> caught{cand(0.0, 10, true, 0), cand(0.5, 40, true, 0)};
  const auto fallback = select_candidate(caught, Objective::max_profit);
  EXPECT_EQ(fallback.epsilon, 0.5);
  EXPECT_TRUE(fallback.surrogate->detected);
}

TEST(Config, StrategyNamesAndJsonRoundTrip) {
  for (Strategy s : kAllStrategies) EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_THROW(strategy_from_string("greedy"), Error);
  AttackConfig c;
  c.algorithm = AdversarialAlgorithm::bim;
  c.form = PerturbationForm::additive;
  c.epsilons = {0.25, 0.5};
  AttackConfig back;
  from_json(to_json(c), back);
  EXPECT_EQ(to_json(back), to_json(c));
  nlohmann::json bad = to_json(c);
  bad["epsilons"] = {1.5};
  EXPECT_THROW(from_json(bad, back), Error);
}
