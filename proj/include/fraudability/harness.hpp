#pragma once

// Inject-and-test labeling, attack metrics and the selected-vs-random
// experiment against a transfer target.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/attack.hpp"
#include "fraudability/common.hpp"
#include "fraudability/detector.hpp"
#include "fraudability/features.hpp"
#include "fraudability/lof.hpp"
#include "fraudability/scorer.hpp"
#include "fraudability/synth.hpp"

namespace fraudability {

struct InjectionRecord {
  std::string user_id;
  std::size_t position = 0;
  Strategy strategy = Strategy::pure_random;
  DetectionOutcome outcome;
  double amount = 0.0;
};

struct AttackMetrics {
  double injection_rate = 0.0;
  double time_to_detection = 0.0;
  double money_stolen = 0.0;
  std::size_t users = 0;
  std::size_t injections = 0;

  bool operator==(const AttackMetrics&) const = default;
};

inline nlohmann::json to_json(const AttackMetrics& m) {
  return {{"injection_rate", m.injection_rate},
          {"time_to_detection", m.time_to_detection},
          {"money_stolen", m.money_stolen},
          {"users", m.users},
          {"injections", m.injections}};
}

/// Detection time with the undetected convention T = n.
inline double record_time(const InjectionRecord& r, std::size_t n) {
  return r.outcome.detected ? static_cast<double>(r.outcome.detection_time) : static_cast<double>(n);
}

/// Per-user averages of undetected share and T, then the mean over users;
/// money is the summed undetected amount divided by the number of users.
inline AttackMetrics compute_aggregate_metrics(std::span<const std::vector<InjectionRecord>> by_user, std::size_t n) {
  require(!by_user.empty(), ErrorCategory::invalid_argument, "compute_aggregate_metrics: no users");
  AttackMetrics m;
  m.users = by_user.size();
  for (const auto& recs : by_user) {
    require(!recs.empty(), ErrorCategory::invalid_argument, "compute_aggregate_metrics: user without injections");
    double undetected = 0.0, time = 0.0;
    for (const auto& r : recs) {
      time += record_time(r, n);
      if (!r.outcome.detected) {
        undetected += 1.0;
        m.money_stolen += r.amount;
      }
    }
    const auto f = static_cast<double>(recs.size());
    m.injection_rate += undetected / f;
    m.time_to_detection += time / f;
    m.injections += recs.size();
  }
  const auto users = static_cast<double>(m.users);
  m.injection_rate /= users;
  m.time_to_detection /= users;
  m.money_stolen /= users;
  return m;
}

inline AttackMetrics user_metrics(const std::vector<InjectionRecord>& records, std::size_t n) {
  return compute_aggregate_metrics(std::span<const std::vector<InjectionRecord>>(&records, 1), n);
}

/// Mean of several metric blocks, field by field.
inline AttackMetrics mean_metrics(std::span<const AttackMetrics> blocks) {
  require(!blocks.empty(), ErrorCategory::invalid_argument, "mean_metrics: no blocks");
  AttackMetrics m;
  for (const auto& b : blocks) {
    m.injection_rate += b.injection_rate;
    m.time_to_detection += b.time_to_detection;
    m.money_stolen += b.money_stolen;
    m.users += b.users;
    m.injections += b.injections;
  }
  const auto k = static_cast<double>(blocks.size());
  m.injection_rate /= k;
  m.time_to_detection /= k;
  m.money_stolen /= k;
  m.users /= blocks.size();
  m.injections /= blocks.size();
  return m;
}

// ---------------------------------------------------------------------------
// Crafting and inject-and-test.

/// Adversarial candidate pools keyed by (user, position). Both adversarial
/// objectives select from the same pool, so one can reuse the other's work.
class PoolCache {
 public:
  std::optional<std::vector<Candidate>> find(const std::string& user, std::size_t i) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = pools_.find({user, i});
    if (it == pools_.end()) return std::nullopt;
    return it->second;
  }
  void store(const std::string& user, std::size_t i, std::vector<Candidate> pool) {
    std::lock_guard<std::mutex> lock(mutex_);
    pools_.emplace(std::make_pair(user, i), std::move(pool));
  }
  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return pools_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::size_t>, std::vector<Candidate>> pools_;
};

/// Frozen attacker-side models. `forecaster` is needed by predicted-amount
/// and by adversarial strategies that start from it.
struct Attacker {
  const SurrogateDetector* surrogate = nullptr;
  const Forecaster* forecaster = nullptr;
  AttackConfig config;
  std::uint64_t seed = 0;
  std::shared_ptr<PoolCache> pools;  // optional

  Candidate craft(Strategy s, const UserHistory& u, std::size_t i) const {
    require(surrogate != nullptr, ErrorCategory::state, "attacker has no surrogate");
    const std::span<const Transaction> h = u.transactions;
    const FeatureEncoder& enc = surrogate->encoder();
    switch (s) {
      case Strategy::pure_random: {
        Rng rng(derive_seed(seed, 0xa77, hash_string(u.user_id), i));
        return craft_pure_random(rng, enc, h, i);
      }
      case Strategy::predicted_amount:
        require(forecaster != nullptr, ErrorCategory::state, "predicted-amount needs a trained forecaster");
        return craft_predicted_amount(*forecaster, enc, h, i);
      case Strategy::adversarial_late_detection:
      case Strategy::adversarial_max_profit: {
        if (pools)
          if (auto cached = pools->find(u.user_id, i)) return select_candidate(*cached, objective_of(s));
        const Candidate start = craft(config.adversarial_start, u, i);
        auto pool = adversarial_pool(*surrogate, h, i, start.transaction, config);
        Candidate c = select_candidate(pool, objective_of(s));
        if (pools) pools->store(u.user_id, i, std::move(pool));
        return c;
      }
    }
    fail(ErrorCategory::invalid_argument, "unknown strategy");
  }
};

struct UserAttack {
  std::vector<InjectionRecord> records;
  AttackMetrics metrics;
  std::vector<std::string> candidate_log;  // JSON lines, filled when requested
};

/// Injects a crafted transaction at every position 1..L-n and tests it with
/// `target`. When the target is the attacker's own surrogate, outcomes the
/// crafting already computed are reused.
inline UserAttack inject_and_test(const Attacker& attacker, const WindowDetector& target, const UserHistory& u,
                                  Strategy strategy, bool log_candidates = false) {
  const std::size_t n = target.window();
  require(u.size() > n, ErrorCategory::invalid_argument,
          "inject_and_test: user " + u.user_id + " has " + std::to_string(u.size()) + " transactions, needs > n = " +
              std::to_string(n));
  UserAttack out;
  const bool own = &target == static_cast<const WindowDetector*>(attacker.surrogate);
  for (std::size_t i = 1; i <= u.size() - n; ++i) {
    Candidate c = attacker.craft(strategy, u, i);
    DetectionOutcome o;
    if (own && c.surrogate) {
      o = *c.surrogate;
    } else {
      const auto injected = inject(u.transactions, i, c.transaction);
      o = detect_injected(target, injected, i, c.transaction.amount);
    }
    o.injected_amount = c.transaction.amount;
    if (log_candidates) {
      auto j = candidate_to_json(u.user_id, i, strategy, c);
      j["target"] = {{"detected", o.detected}, {"detection_time", o.detection_time}};
      out.candidate_log.push_back(j.dump());
    }
    out.records.push_back({u.user_id, i, strategy, o, c.transaction.amount});
  }
  out.metrics = user_metrics(out.records, n);
  return out;
}

/// Runs `fn(k)` for k in [0, count) on up to `threads` workers. Results must
/// be written by index so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct Labels {
  std::map<std::string, double> raw;     // money stolen per user
  std::map<std::string, double> scaled;  // min-max scaled to [0,1]
  std::vector<UserAttack> attacks;       // in split order
  AttackMetrics metrics;                 // aggregate over the split
  bool degenerate = false;
};

/// Min-max scaling; when every label is equal all users get 0.5.
inline std::map<std::string, double> scale_labels(const std::map<std::string, double>& raw, bool* degenerate = nullptr) {
  require(!raw.empty(), ErrorCategory::invalid_argument, "scale_labels: no labels");
  double lo = raw.begin()->second, hi = lo;
  for (const auto& [id, v] : raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const bool flat = !(hi > lo);
  if (degenerate) *degenerate = flat;
  std::map<std::string, double> out;
  for (const auto& [id, v] : raw) out[id] = flat ? 0.5 : (v - lo) / (hi - lo);
  return out;
}

/// Inject-and-test against the surrogate for every user of the split.
inline Labels label_users(const Attacker& attacker, const Dataset& split, Strategy strategy, std::size_t threads = 1) {
  require(attacker.surrogate != nullptr, ErrorCategory::state, "label_users: attacker has no surrogate");
  require(!split.users.empty(), ErrorCategory::invalid_argument, "label_users: empty split");
  Labels l;
  l.attacks.resize(split.users.size());
  parallel_for(split.users.size(), threads, [&](std::size_t k) {
    l.attacks[k] = inject_and_test(attacker, *attacker.surrogate, split.users[k], strategy);
  });
  std::vector<std::vector<InjectionRecord>> by_user;
  for (std::size_t k = 0; k < split.users.size(); ++k) {
    l.raw[split.users[k].user_id] = l.attacks[k].metrics.money_stolen;
    by_user.push_back(l.attacks[k].records);
  }
  l.metrics = compute_aggregate_metrics(by_user, attacker.surrogate->window());
  l.scaled = scale_labels(l.raw, &l.degenerate);
  return l;
}

// ---------------------------------------------------------------------------
// Experiment.

struct ExperimentConfig {
  GenerationConfig generation = default_generation_config();
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t embed_dim = 4;
  double knowledge_fraction = 0.3;
  double calibration_fraction = 0.2;  // of the attacker split, for alpha
  double scorer_held_out_fraction = 0.2;
  std::vector<Strategy> strategies{std::begin(kAllStrategies), std::end(kAllStrategies)};
  std::vector<RegressorKind> regressors{std::begin(kAllRegressors), std::end(kAllRegressors)};
  std::size_t top_k = 20;
  std::size_t repetitions = 10;
  DetectorConfig detector;
  ForecasterConfig forecaster;
  LofConfig lof;
  AttackConfig attack;
  RegressorConfig regressor;
  std::vector<double> monitoring_days{7, 14, 30, 60, 120};
  std::size_t threads = 1;
  bool log_candidates = false;
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  std::vector<std::string> strategies, regressors;
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  for (auto r : c.regressors) regressors.push_back(to_string(r));
  return {{"generation", to_json(c.generation)},
          {"seeds", c.seeds},
          {"embed_dim", c.embed_dim},
          {"knowledge_fraction", c.knowledge_fraction},
          {"calibration_fraction", c.calibration_fraction},
          {"scorer_held_out_fraction", c.scorer_held_out_fraction},
          {"strategies", strategies},
          {"regressors", regressors},
          {"top_k", c.top_k},
          {"repetitions", c.repetitions},
          {"detector", to_json(c.detector)},
          {"forecaster", to_json(c.forecaster)},
          {"lof", to_json(c.lof)},
          {"attack", to_json(c.attack)},
          {"regressor", to_json(c.regressor)},
          {"monitoring_days", c.monitoring_days},
          {"threads", c.threads},
          {"log_candidates", c.log_candidates}};
}

inline void validate(const ExperimentConfig& c) {
  validate(c.generation);
  require(!c.seeds.empty(), ErrorCategory::config, "seeds must not be empty");
  require(c.embed_dim >= 1, ErrorCategory::config, "embed_dim must be >= 1");
  require(c.knowledge_fraction > 0.0 && c.knowledge_fraction < 1.0, ErrorCategory::config,
          "knowledge_fraction must lie in (0,1)");
  require(c.calibration_fraction > 0.0 && c.calibration_fraction < 1.0, ErrorCategory::config,
          "calibration_fraction must lie in (0,1)");
  require(c.scorer_held_out_fraction > 0.0 && c.scorer_held_out_fraction < 1.0, ErrorCategory::config,
          "scorer_held_out_fraction must lie in (0,1)");
  require(!c.strategies.empty() && !c.regressors.empty(), ErrorCategory::config,
          "strategies and regressors must not be empty");
  require(c.top_k >= 1, ErrorCategory::config, "top_k must be >= 1");
  require(c.repetitions >= 1, ErrorCategory::config, "repetitions must be >= 1");
  require(c.detector.window >= 2, ErrorCategory::config, "detector.window must be >= 2");
  require(c.detector.quantile > 0.0 && c.detector.quantile < 1.0, ErrorCategory::config,
          "detector.quantile must lie in (0,1)");
  require(c.lof.quantile > 0.0 && c.lof.quantile < 1.0 && c.lof.k >= 1, ErrorCategory::config, "invalid lof config");
  for (double d : c.monitoring_days) require(d > 0.0, ErrorCategory::config, "monitoring_days must be > 0");
  require(c.threads >= 1, ErrorCategory::config, "threads must be >= 1");
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("generation")) from_json(j.at("generation"), c.generation);
  c.seeds = j.value("seeds", c.seeds);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.knowledge_fraction = j.value("knowledge_fraction", c.knowledge_fraction);
  c.calibration_fraction = j.value("calibration_fraction", c.calibration_fraction);
  c.scorer_held_out_fraction = j.value("scorer_held_out_fraction", c.scorer_held_out_fraction);
  if (j.contains("strategies")) {
    c.strategies.clear();
    for (const auto& s : j.at("strategies")) c.strategies.push_back(strategy_from_string(s.get<std::string>()));
  }
  if (j.contains("regressors")) {
    c.regressors.clear();
    for (const auto& r : j.at("regressors")) c.regressors.push_back(regressor_from_string(r.get<std::string>()));
  }
  c.top_k = j.value("top_k", c.top_k);
  c.repetitions = j.value("repetitions", c.repetitions);
  if (j.contains("detector")) from_json(j.at("detector"), c.detector);
  if (j.contains("forecaster")) from_json(j.at("forecaster"), c.forecaster);
  if (j.contains("lof")) from_json(j.at("lof"), c.lof);
  if (j.contains("attack")) from_json(j.at("attack"), c.attack);
  if (j.contains("regressor")) from_json(j.at("regressor"), c.regressor);
  c.monitoring_days = j.value("monitoring_days", c.monitoring_days);
  c.threads = j.value("threads", c.threads);
  c.log_candidates = j.value("log_candidates", c.log_candidates);
  validate(c);
}

/// Wall-clock seconds of `fn()`.
template <typename F>
double timed(F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Attacker knowledge split (itself split into training and calibration
/// users) and the defender complement.
struct KnowledgeSplits {
  Dataset attacker, attacker_train, attacker_calibration, defender;
};

inline KnowledgeSplits split_for_attack(const Dataset& dataset, const ExperimentConfig& c, std::uint64_t seed) {
  KnowledgeSplits s;
  const double kf[] = {c.knowledge_fraction};
  s.attacker = split_knowledge(dataset, kf, derive_seed(seed, 1))[0];
  s.defender = complement(dataset, std::span<const Dataset>(&s.attacker, 1));
  const double tf[] = {1.0 - c.calibration_fraction};
  s.attacker_train = split_knowledge(s.attacker, tf, derive_seed(seed, 2))[0];
  s.attacker_calibration = complement(s.attacker, std::span<const Dataset>(&s.attacker_train, 1));
  require(!s.attacker_train.users.empty() && !s.attacker_calibration.users.empty() && !s.defender.users.empty(),
          ErrorCategory::invalid_argument, "too few users for the requested splits");
  return s;
}

/// Surrogate trained on the attacker's training users, alpha calibrated on
/// the held-back attacker users.
inline SurrogateDetector train_attacker_surrogate(const ExperimentConfig& c, const KnowledgeSplits& s, std::uint64_t seed) {
  const FeatureEncoder enc = fit_encoder(s.attacker, c.embed_dim, derive_seed(seed, 3));
  SurrogateDetector d = train_surrogate(s.attacker_train, enc, c.detector, derive_seed(seed, 4));
  calibrate_threshold(d, extract_windows(d.encoder(), s.attacker_calibration, c.detector.window), c.detector.quantile);
  return d;
}

inline Forecaster train_attacker_forecaster(const ExperimentConfig& c, const KnowledgeSplits& s,
                                            const SurrogateDetector& surrogate, std::uint64_t seed) {
  return train_forecaster(s.attacker_train, surrogate.encoder(), c.forecaster, derive_seed(seed, 5));
}

/// The attacked detector: LOF on the defender's own users and encoder.
inline LofDetector train_target(const ExperimentConfig& c, const KnowledgeSplits& s, std::uint64_t seed) {
  const FeatureEncoder enc = fit_encoder(s.defender, c.embed_dim, derive_seed(seed, 6));
  return train_lof_detector(s.defender, enc, c.detector.window, c.lof, derive_seed(seed, 7));
}

/// Everything a seed's pipeline trains before any attack is evaluated.
struct AttackerModels {
  Dataset dataset, attacker, attacker_train, attacker_calibration, defender;
  SurrogateDetector surrogate;
  Forecaster forecaster;
  LofDetector target;
};

inline AttackerModels train_models(const ExperimentConfig& c, std::uint64_t seed, nlohmann::json& timings) {
  AttackerModels m;
  m.dataset = generate_dataset(c.generation, seed);
  KnowledgeSplits s = split_for_attack(m.dataset, c, seed);
  timings["surrogate_seconds"] = timed([&] { m.surrogate = train_attacker_surrogate(c, s, seed); });
  timings["forecaster_seconds"] = timed([&] { m.forecaster = train_attacker_forecaster(c, s, m.surrogate, seed); });
  timings["target_seconds"] = timed([&] { m.target = train_target(c, s, seed); });
  m.attacker = std::move(s.attacker);
  m.attacker_train = std::move(s.attacker_train);
  m.attacker_calibration = std::move(s.attacker_calibration);
  m.defender = std::move(s.defender);
  return m;
}

/// `k` distinct users drawn uniformly from `ids` (sorted copy, seeded).
inline std::vector<std::string> random_selection(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  require(k <= ids.size(), ErrorCategory::invalid_argument, "random_selection: k exceeds the pool");
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t j = 0; j < k; ++j) std::swap(ids[j], ids[j + uniform_index(rng, ids.size() - j)]);
  ids.resize(k);
  return ids;
}

struct SeedResult {
  nlohmann::json report;   // deterministic
  nlohmann::json timings;  // wall clock, kept apart from the report
  std::vector<std::string> candidate_log;
};

using ProgressFn = std::function<void(const std::string&)>;

/// One seed of the full pipeline. Scorer examples are attacker users labeled
/// by inject-and-test on the surrogate; evaluation users are the defender
/// split; attacks are crafted on the surrogate and tested on the LOF target.
inline SeedResult run_seed(const ExperimentConfig& c, std::uint64_t seed, const ProgressFn& progress = {}) {
  validate(c);
  auto say = [&](const std::string& s) {
    if (progress) progress("seed " + std::to_string(seed) + ": " + s);
  };
  SeedResult out;
  out.timings = {{"seed", seed}};
  const std::size_t n = c.detector.window;
  say("training surrogate, forecaster and target");
  const AttackerModels m = train_models(c, seed, out.timings);
  const Attacker attacker{&m.surrogate, &m.forecaster, c.attack, derive_seed(seed, 9), std::make_shared<PoolCache>()};

  const FeatureEncoder& enc = m.surrogate.encoder();
  const auto train_profiles = build_profiles(enc, m.attacker);
  const auto eval_profiles = build_profiles(enc, m.defender);
  std::vector<std::string> eval_ids;
  for (const auto& u : m.defender.users)
    if (u.size() > n && eval_profiles.count(u.user_id)) eval_ids.push_back(u.user_id);
  require(c.top_k <= eval_ids.size(), ErrorCategory::invalid_argument,
          "top_k = " + std::to_string(c.top_k) + " exceeds the " + std::to_string(eval_ids.size()) +
              " evaluable users");
  std::map<std::string, const UserHistory*> eval_users;
  for (const auto& u : m.defender.users) eval_users[u.user_id] = &u;

  std::vector<std::vector<std::string>> random_sets;
  for (std::size_t r = 0; r < c.repetitions; ++r)
    random_sets.push_back(random_selection(eval_ids, c.top_k, derive_seed(seed, 0x4a7, r)));

  nlohmann::json report{{"seed", seed},
                        {"users", {{"total", m.dataset.users.size()},
                                   {"attacker", m.attacker.users.size()},
                                   {"attacker_train", m.attacker_train.users.size()},
                                   {"attacker_calibration", m.attacker_calibration.users.size()},
                                   {"defender", m.defender.users.size()},
                                   {"evaluation", eval_ids.size()}}},
                        {"surrogate", {{"alpha", m.surrogate.threshold()},
                                       {"quantile", m.surrogate.quantile()},
                                       {"final_loss", m.surrogate.train_curve.empty() ? 0.0 : m.surrogate.train_curve.back()},
                                       {"defender_window_fpr", flagged_fraction(m.surrogate, extract_windows(enc, m.defender, n))}}},
                        {"target", {{"kind", "lof"}, {"threshold", m.target.threshold()}}},
                        {"forecaster", {{"final_loss", m.forecaster.train_curve.empty() ? 0.0 : m.forecaster.train_curve.back()}}},
                        {"warnings", nlohmann::json::array()}};
  nlohmann::json strategies = nlohmann::json::object();
  nlohmann::json strategy_timings = nlohmann::json::object();

  // Max-profit goes before late-detection so its timings carry the full
  // cost of building the shared adversarial pools.
  std::vector<Strategy> order = c.strategies;
  std::stable_partition(order.begin(), order.end(), [](Strategy s) { return s != Strategy::adversarial_late_detection; });
  bool pools_built = false;
  for (Strategy s : order) {
    const std::string sname = to_string(s);
    const bool adversarial = is_adversarial(s);
    say("labeling attacker users with " + sname);
    Labels labels;
    const double label_seconds = timed([&] { labels = label_users(attacker, m.attacker, s, c.threads); });
    if (labels.degenerate)
      report["warnings"].push_back(sname + ": all labels equal, scaled labels set to 0.5");
    double lo = labels.raw.begin()->second, hi = lo;
    for (const auto& [id, v] : labels.raw) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    auto [train, held] = split_examples(make_examples(train_profiles, labels.scaled), c.scorer_held_out_fraction,
                                        derive_seed(seed, 8));
    std::vector<double> train_labels;
    for (const auto& e : train) train_labels.push_back(e.label);
    const double mean_label = detail::stable_mean(train_labels);
    double actual_money = 0.0;
    for (const auto& e : held) actual_money += labels.raw.at(e.user_id);
    actual_money /= static_cast<double>(held.size());

    nlohmann::json sj{{"surrogate_labeling", to_json(labels.metrics)},
                      {"label_range", {lo, hi}},
                      {"label_degenerate", labels.degenerate},
                      {"scorer_train_users", train.size()},
                      {"scorer_held_out_users", held.size()}};
    nlohmann::json st{{"inject_and_test_seconds", label_seconds},
                      {"inject_and_test_seconds_per_user", label_seconds / static_cast<double>(m.attacker.users.size())}};

    // Rankings first, so every user to attack is known before crafting.
    std::map<RegressorKind, std::vector<std::string>> selected;
    nlohmann::json regressors = nlohmann::json::object();
    nlohmann::json regressor_timings = nlohmann::json::object();
    for (RegressorKind k : c.regressors) {
      Regressor r;
      const double fit_seconds =
          timed([&] { r = train_regressor(k, train, c.regressor, derive_seed(seed, 10, static_cast<int>(k))); });
      double predicted_money = 0.0;
      for (const auto& e : held) predicted_money += lo + r.predict(e.features) * (hi - lo);
      predicted_money /= static_cast<double>(held.size());
      std::vector<RankedUser> ranking;
      const double score_seconds = timed([&] {
        std::vector<RankedUser> scored;
        for (const auto& id : eval_ids) scored.push_back({id, r.predict(build_profile(enc, *eval_users.at(id)).flatten())});
        ranking = rank_scores(std::move(scored));
      });
      for (std::size_t j = 0; j < c.top_k; ++j) selected[k].push_back(ranking[j].user_id);
      regressors[to_string(k)] = {{"training_mae", r.training_mae},
                                  {"heldout_mae", evaluate_regressor(r, held)},
                                  {"mean_baseline_mae", mean_baseline_mae(mean_label, held)},
                                  {"actual_money_per_user", actual_money},
                                  {"predicted_money_per_user", predicted_money},
                                  {"selected_users", selected[k]}};
      regressor_timings[to_string(k)] = {
          {"fit_seconds", fit_seconds},
          {"predictor_seconds_per_user", score_seconds / static_cast<double>(eval_ids.size())}};
    }

    std::set<std::string> needed;
    for (const auto& [k, ids] : selected) needed.insert(ids.begin(), ids.end());
    for (const auto& ids : random_sets) needed.insert(ids.begin(), ids.end());
    const std::vector<std::string> todo(needed.begin(), needed.end());
    say("attacking " + std::to_string(todo.size()) + " evaluation users with " + sname);
    std::vector<UserAttack> attacks(todo.size());
    const double attack_seconds = timed([&] {
      parallel_for(todo.size(), c.threads, [&](std::size_t j) {
        attacks[j] = inject_and_test(attacker, m.target, *eval_users.at(todo[j]), s, c.log_candidates);
      });
    });
    std::map<std::string, const UserAttack*> by_id;
    for (std::size_t j = 0; j < todo.size(); ++j) {
      by_id[todo[j]] = &attacks[j];
      for (auto& line : attacks[j].candidate_log) out.candidate_log.push_back(std::move(line));
    }
    auto block = [&](const std::vector<std::string>& ids) {
      std::vector<std::vector<InjectionRecord>> recs;
      for (const auto& id : ids) recs.push_back(by_id.at(id)->records);
      return compute_aggregate_metrics(recs, n);
    };
    std::vector<AttackMetrics> random_blocks;
    nlohmann::json random_runs = nlohmann::json::array();
    for (const auto& ids : random_sets) {
      random_blocks.push_back(block(ids));
      random_runs.push_back(to_json(random_blocks.back()));
    }
    const AttackMetrics random_mean = mean_metrics(random_blocks);
    for (RegressorKind k : c.regressors) {
      auto& rj = regressors[to_string(k)];
      rj["selected"] = to_json(block(selected[k]));
      rj["random"] = to_json(random_mean);
    }
    sj["regressors"] = std::move(regressors);
    sj["random_runs"] = std::move(random_runs);
    strategies[sname] = std::move(sj);
    st["target_attack_seconds"] = attack_seconds;
    st["shared_pool"] = adversarial && pools_built;
    pools_built = pools_built || adversarial;
    st["regressors"] = std::move(regressor_timings);
    strategy_timings[sname] = std::move(st);
  }
  report["strategies"] = std::move(strategies);
  out.timings["strategies"] = std::move(strategy_timings);
  out.report = std::move(report);
  return out;
}

struct ExperimentResult {
  nlohmann::json report;
  nlohmann::json timings;
  std::vector<std::string> candidate_log;
};

/// Mean over seeds of each strategy x regressor block, plus the number of
/// seeds in which selection beats random on both rate and money.
inline nlohmann::json summarize_runs(const nlohmann::json& runs) {
  nlohmann::json summary = nlohmann::json::object();
  const auto seeds = static_cast<double>(runs.size());
  for (const auto& [sname, first] : runs.at(0).at("strategies").items()) {
    nlohmann::json sj{{"surrogate_injection_rate", 0.0}, {"regressors", nlohmann::json::object()}};
    for (const auto& run : runs)
      sj["surrogate_injection_rate"] =
          sj["surrogate_injection_rate"].get<double>() +
          run.at("strategies").at(sname).at("surrogate_labeling").at("injection_rate").get<double>() / seeds;
    for (const auto& [rname, unused] : first.at("regressors").items()) {
      double sel_rate = 0, rnd_rate = 0, sel_money = 0, rnd_money = 0, sel_ttd = 0, rnd_ttd = 0, mae = 0, base = 0;
      int wins_rate = 0, wins_money = 0;
      for (const auto& run : runs) {
        const auto& r = run.at("strategies").at(sname).at("regressors").at(rname);
        const double sr = r.at("selected").at("injection_rate"), rr = r.at("random").at("injection_rate");
        const double sm = r.at("selected").at("money_stolen"), rm = r.at("random").at("money_stolen");
        sel_rate += sr / seeds;
        rnd_rate += rr / seeds;
        sel_ttd += r.at("selected").at("time_to_detection").get<double>() / seeds;
        rnd_ttd += r.at("random").at("time_to_detection").get<double>() / seeds;
        sel_money += sm / seeds;
        rnd_money += rm / seeds;
        mae += r.at("heldout_mae").get<double>() / seeds;
        base += r.at("mean_baseline_mae").get<double>() / seeds;
        wins_rate += sr > rr;
        wins_money += sm > rm;
      }
      sj["regressors"][rname] = {{"selected_injection_rate", sel_rate}, {"random_injection_rate", rnd_rate},
                                 {"selected_time_to_detection", sel_ttd}, {"random_time_to_detection", rnd_ttd},
                                 {"selected_money_stolen", sel_money},  {"random_money_stolen", rnd_money},
                                 {"seeds_rate_advantage", wins_rate},   {"seeds_money_advantage", wins_money},
                                 {"heldout_mae", mae},                  {"mean_baseline_mae", base}};
    }
    summary[sname] = std::move(sj);
  }
  return summary;
}

inline ExperimentResult run_experiment(const ExperimentConfig& c, const ProgressFn& progress = {}) {
  validate(c);
  ExperimentResult out;
  nlohmann::json runs = nlohmann::json::array(), timings = nlohmann::json::array();
  for (std::uint64_t seed : c.seeds) {
    SeedResult r = run_seed(c, seed, progress);
    runs.push_back(std::move(r.report));
    timings.push_back(std::move(r.timings));
    for (auto& line : r.candidate_log) out.candidate_log.push_back(std::move(line));
  }
  out.report = {{"format", "fraudability-experiment"},
                {"version", 1},
                {"config", to_json(c)},
                {"runs", runs},
                {"summary", summarize_runs(runs)}};
  out.timings = {{"format", "fraudability-timings"}, {"runs", std::move(timings)}};
  return out;
}

// ---------------------------------------------------------------------------
// Tables.

/// One row per seed x strategy x regressor x selection, plus seed "mean" rows.
inline std::string table1_csv(const nlohmann::json& report) {
  std::string out = "seed,strategy,knowledge_fraction,regressor,selection,injection_rate,time_to_detection,money_stolen\n";
  const std::string kf = detail::format_double(report.at("config").at("knowledge_fraction").get<double>());
  for (const auto& run : report.at("runs"))
    for (const auto& [sname, sj] : run.at("strategies").items())
      for (const auto& [rname, rj] : sj.at("regressors").items())
        for (const char* sel : {"selected", "random"}) {
          const auto& b = rj.at(sel);
          out += std::to_string(run.at("seed").get<std::uint64_t>()) + "," + sname + "," + kf + "," + rname + "," + sel +
                 "," + detail::format_double(b.at("injection_rate")) + "," +
                 detail::format_double(b.at("time_to_detection")) + "," + detail::format_double(b.at("money_stolen")) +
                 "\n";
        }
  for (const auto& [sname, sj] : report.at("summary").items())
    for (const auto& [rname, r] : sj.at("regressors").items()) {
      out += "mean," + sname + "," + kf + "," + rname + ",selected," +
             detail::format_double(r.at("selected_injection_rate")) + "," +
             detail::format_double(r.at("selected_time_to_detection")) + "," +
             detail::format_double(r.at("selected_money_stolen")) + "\n";
      out += "mean," + sname + "," + kf + "," + rname + ",random," +
             detail::format_double(r.at("random_injection_rate")) + "," +
             detail::format_double(r.at("random_time_to_detection")) + "," +
             detail::format_double(r.at("random_money_stolen")) + "\n";
    }
  return out;
}

/// Scorer quality: held-out MAE against the mean baseline, and mean actual
/// vs predicted money per held-out user.
inline std::string table2_csv(const nlohmann::json& report) {
  std::string out = "seed,strategy,regressor,heldout_mae,mean_baseline_mae,actual_money_per_user,predicted_money_per_user\n";
  for (const auto& run : report.at("runs"))
    for (const auto& [sname, sj] : run.at("strategies").items())
      for (const auto& [rname, r] : sj.at("regressors").items())
        out += std::to_string(run.at("seed").get<std::uint64_t>()) + "," + sname + "," + rname + "," +
               detail::format_double(r.at("heldout_mae")) + "," + detail::format_double(r.at("mean_baseline_mae")) +
               "," + detail::format_double(r.at("actual_money_per_user")) + "," +
               detail::format_double(r.at("predicted_money_per_user")) + "\n";
  return out;
}

struct TimingRow {
  std::string name;  // "inject-and-test:<strategy>" or "predictor:<regressor>"
  double seconds_per_user = 0.0;
};

/// Seconds per user averaged over seeds: inject-and-test labeling for each
/// strategy, and profile-plus-predict for each regressor (mean over the
/// models trained for each strategy).
inline std::vector<TimingRow> timing_rows(const nlohmann::json& timings) {
  const auto& runs = timings.at("runs");
  require(!runs.empty(), ErrorCategory::invalid_argument, "timings: no runs");
  std::map<std::string, double> sum;
  std::vector<std::string> order;
  auto add = [&](const std::string& key, double v) {
    if (!sum.count(key)) order.push_back(key);
    sum[key] += v / static_cast<double>(runs.size());
  };
  for (const auto& run : runs) {
    const auto strategies = static_cast<double>(run.at("strategies").size());
    for (const auto& [sname, st] : run.at("strategies").items()) {
      add("inject-and-test:" + sname, st.at("inject_and_test_seconds_per_user").get<double>());
      for (const auto& [rname, rt] : st.at("regressors").items())
        add("predictor:" + rname, rt.at("predictor_seconds_per_user").get<double>() / strategies);
    }
  }
  std::vector<TimingRow> out;
  for (const auto& key : order) out.push_back({key, sum[key]});
  return out;
}

inline std::string timing_csv(std::span<const TimingRow> rows) {
  std::string out = "row,seconds_per_user\n";
  for (const auto& r : rows) out += r.name + "," + detail::format_double(r.seconds_per_user) + "\n";
  return out;
}

}  // namespace fraudability
