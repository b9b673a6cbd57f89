#pragma once

// Crafting of injected fraudulent transactions.
//
// A transaction injected at position i of a history of length L is inserted
// between the victim's transactions i-1 and i, so it becomes row i of the
// injected history (L+1 rows). Valid positions are 1..L-1; inject-and-test
// uses 1..L-n. Immutable fields (payment type, age, ip hash) always come from
// the victim's transaction i-1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"
#include "fraudability/detector.hpp"
#include "fraudability/features.hpp"
#include "fraudability/io.hpp"
#include "fraudability/nn/checkpoint.hpp"
#include "fraudability/nn/layers.hpp"
#include "fraudability/nn/optimizer.hpp"
#include "fraudability/synth.hpp"

namespace fraudability {

enum class Strategy { pure_random, predicted_amount, adversarial_late_detection, adversarial_max_profit };

inline constexpr Strategy kAllStrategies[] = {Strategy::pure_random, Strategy::predicted_amount,
                                              Strategy::adversarial_late_detection, Strategy::adversarial_max_profit};

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::pure_random: return "pure-random";
    case Strategy::predicted_amount: return "predicted-amount";
    case Strategy::adversarial_late_detection: return "adversarial-late-detection";
    case Strategy::adversarial_max_profit: return "adversarial-max-profit";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (Strategy k : kAllStrategies)
    if (to_string(k) == s) return k;
  fail(ErrorCategory::config, "unknown strategy '" + s +
                                  "' (expected pure-random, predicted-amount, adversarial-late-detection, "
                                  "adversarial-max-profit)");
}

inline bool is_adversarial(Strategy s) {
  return s == Strategy::adversarial_late_detection || s == Strategy::adversarial_max_profit;
}

enum class AdversarialAlgorithm { fgsm, bim };
enum class PerturbationForm { multiplicative, additive };

struct AttackConfig {
  std::vector<double> epsilons{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  AdversarialAlgorithm algorithm = AdversarialAlgorithm::fgsm;
  // multiplicative: x - x*eps*S; additive: x - eps*S.
  PerturbationForm form = PerturbationForm::multiplicative;
  double bim_step_fraction = 0.2;  // BIM step = eps * fraction
  std::size_t bim_iterations = 0;  // 0: ceil(1.25 * eps / step)
  // Initial transaction handed to the adversarial crafting.
  Strategy adversarial_start = Strategy::predicted_amount;
};

inline nlohmann::json to_json(const AttackConfig& c) {
  return {{"epsilons", c.epsilons},
          {"algorithm", c.algorithm == AdversarialAlgorithm::fgsm ? "fgsm" : "bim"},
          {"form", c.form == PerturbationForm::multiplicative ? "multiplicative" : "additive"},
          {"bim_step_fraction", c.bim_step_fraction},
          {"bim_iterations", c.bim_iterations},
          {"adversarial_start", to_string(c.adversarial_start)}};
}

inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  c.epsilons = j.value("epsilons", c.epsilons);
  if (j.contains("algorithm")) {
    const auto a = j.at("algorithm").get<std::string>();
    require(a == "fgsm" || a == "bim", ErrorCategory::config, "attack.algorithm must be fgsm or bim, got " + a);
    c.algorithm = a == "fgsm" ? AdversarialAlgorithm::fgsm : AdversarialAlgorithm::bim;
  }
  if (j.contains("form")) {
    const auto f = j.at("form").get<std::string>();
    require(f == "multiplicative" || f == "additive", ErrorCategory::config,
            "attack.form must be multiplicative or additive, got " + f);
    c.form = f == "multiplicative" ? PerturbationForm::multiplicative : PerturbationForm::additive;
  }
  c.bim_step_fraction = j.value("bim_step_fraction", c.bim_step_fraction);
  c.bim_iterations = j.value("bim_iterations", c.bim_iterations);
  if (j.contains("adversarial_start")) c.adversarial_start = strategy_from_string(j.at("adversarial_start"));
  require(!c.epsilons.empty(), ErrorCategory::config, "attack.epsilons must not be empty");
  for (double e : c.epsilons) require(e > 0.0 && e < 1.0, ErrorCategory::config, "attack.epsilons must lie in (0,1)");
  require(c.bim_step_fraction > 0.0, ErrorCategory::config, "attack.bim_step_fraction must be > 0");
  require(c.adversarial_start == Strategy::pure_random || c.adversarial_start == Strategy::predicted_amount,
          ErrorCategory::config, "attack.adversarial_start must be pure-random or predicted-amount");
}

struct BimSchedule {
  double step = 0.0;
  std::size_t iterations = 0;
};

inline BimSchedule bim_schedule(double eps, const AttackConfig& c) {
  const double step = eps * c.bim_step_fraction;
  if (c.bim_iterations > 0) return {step, c.bim_iterations};
  const double iters = std::ceil(1.25 * eps / step - 1e-9);
  return {step, static_cast<std::size_t>(std::max(1.0, iters))};
}

// ---------------------------------------------------------------------------
// Gradient-sign updates on flat coordinate vectors.

inline double sign_of(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

/// Which coordinates move and which are clamped to [0,1] afterwards.
struct PerturbationMask {
  std::vector<std::uint8_t> perturb;
  std::vector<std::uint8_t> unit_range;
};

/// One step x <- x - scale(x) * step * sign(g) on the perturbed coordinates,
/// where scale(x) is x (multiplicative) or 1 (additive).
inline void sign_step(std::span<double> x, std::span<const double> grad, const PerturbationMask& mask, double step,
                      PerturbationForm form) {
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!mask.perturb[j]) continue;
    const double scale = form == PerturbationForm::multiplicative ? x[j] : 1.0;
    x[j] -= scale * step * sign_of(grad[j]);
  }
}

inline void clamp_unit(std::span<double> x, const PerturbationMask& mask) {
  for (std::size_t j = 0; j < x.size(); ++j)
    if (mask.perturb[j] && mask.unit_range[j]) x[j] = std::clamp(x[j], 0.0, 1.0);
}

/// FGSM from `x0` with gradient `grad` at `x0`.
inline std::vector<double> fgsm(std::span<const double> x0, std::span<const double> grad, const PerturbationMask& mask,
                                double eps, PerturbationForm form) {
  require(grad.size() == x0.size() && mask.perturb.size() == x0.size() && mask.unit_range.size() == x0.size(),
          ErrorCategory::shape, "fgsm: size mismatch");
  std::vector<double> x(x0.begin(), x0.end());
  sign_step(x, grad, mask, eps, form);
  clamp_unit(x, mask);
  return x;
}

/// BIM: `iterations` sign steps of size `step`, the gradient re-evaluated at
/// each iterate by `gradient(x, g)`, clipped after each step to the eps-ball
/// around `x0` (radius eps*|x0| for the multiplicative form) and to [0,1].
template <typename Gradient>
std::vector<double> bim(std::span<const double> x0, Gradient&& gradient, const PerturbationMask& mask, double eps,
                        double step, std::size_t iterations, PerturbationForm form) {
  require(mask.perturb.size() == x0.size() && mask.unit_range.size() == x0.size(), ErrorCategory::shape,
          "bim: size mismatch");
  std::vector<double> x(x0.begin(), x0.end()), g;
  for (std::size_t it = 0; it < iterations; ++it) {
    gradient(std::span<const double>(x), g);
    require(g.size() == x.size(), ErrorCategory::shape, "bim: gradient size mismatch");
    sign_step(x, g, mask, step, form);
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (!mask.perturb[j]) continue;
      const double radius = form == PerturbationForm::multiplicative ? eps * std::abs(x0[j]) : eps;
      x[j] = std::clamp(x[j], x0[j] - radius, x0[j] + radius);
    }
    clamp_unit(x, mask);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Injection helpers.

/// Copy of `history` with `t` inserted as row `i`.
inline std::vector<Transaction> inject(std::span<const Transaction> history, std::size_t i, const Transaction& t) {
  require(i <= history.size(), ErrorCategory::invalid_argument, "inject: position out of range");
  std::vector<Transaction> out;
  out.reserve(history.size() + 1);
  out.insert(out.end(), history.begin(), history.begin() + static_cast<std::ptrdiff_t>(i));
  out.push_back(t);
  out.insert(out.end(), history.begin() + static_cast<std::ptrdiff_t>(i), history.end());
  return out;
}

inline void require_position(std::span<const Transaction> history, std::size_t i) {
  require(i >= 1 && i < history.size(), ErrorCategory::invalid_argument,
          "injection position " + std::to_string(i) + " outside 1.." + std::to_string(history.size() == 0 ? 0 : history.size() - 1));
}

namespace detail {

inline std::int64_t second_of_day(std::int64_t ts) { return ((ts % 86400) + 86400) % 86400; }

inline std::int64_t circular_seconds(std::int64_t a, std::int64_t b) {
  const std::int64_t d = std::abs(a - b) % 86400;
  return std::min(d, 86400 - d);
}

inline std::int64_t floor_day(std::int64_t ts) { return (ts >= 0 ? ts / 86400 : (ts - 86399) / 86400) * 86400; }

}  // namespace detail

/// Timestamp strictly between `prev` and `next` whose second of day is
/// closest to `second_of_day`, preferring the one nearest the midpoint.
/// Returns `prev` when no second lies strictly between them.
inline std::int64_t place_timestamp(std::int64_t prev, std::int64_t next, std::int64_t second_of_day) {
  require(next >= prev, ErrorCategory::invalid_argument, "place_timestamp: next precedes prev");
  if (next - prev < 2) return prev;
  const std::int64_t lo = prev + 1, hi = next - 1, mid = prev + (next - prev) / 2;
  const std::int64_t base = detail::floor_day(mid) + detail::second_of_day(second_of_day);
  std::optional<std::int64_t> best;
  for (std::int64_t ts : {base - 86400, base, base + 86400})
    if (ts >= lo && ts <= hi && (!best || std::abs(ts - mid) < std::abs(*best - mid))) best = ts;
  if (best) return *best;
  return detail::circular_seconds(lo, second_of_day) <= detail::circular_seconds(hi, second_of_day) ? lo : hi;
}

/// The victim's transaction i-1, re-timed between transactions i-1 and i at
/// its own time of day.
inline Transaction injection_template(std::span<const Transaction> history, std::size_t i) {
  require_position(history, i);
  Transaction t = history[i - 1];
  t.timestamp = place_timestamp(history[i - 1].timestamp, history[i].timestamp,
                                detail::second_of_day(history[i - 1].timestamp));
  return t;
}

/// A crafted transaction, its encoding in the injected history and, for
/// adversarial strategies, its outcome on the surrogate.
struct Candidate {
  Transaction transaction;
  std::vector<double> encoded;
  double epsilon = 0.0;
  std::optional<DetectionOutcome> surrogate;
};

inline std::vector<double> encode_injected(const FeatureEncoder& enc, std::span<const Transaction> history,
                                           std::size_t i, const Transaction& t) {
  return enc.encode(t, history[i - 1].timestamp);
}

inline Candidate make_candidate(const FeatureEncoder& enc, std::span<const Transaction> history, std::size_t i,
                                Transaction t) {
  Candidate c;
  c.encoded = encode_injected(enc, history, i, t);
  c.transaction = std::move(t);
  return c;
}

// ---------------------------------------------------------------------------
// Pure random.

/// Random amount (uniform over the fitted range), category (uniform) and
/// time of day (uniform); everything else from the template.
inline Candidate craft_pure_random(Rng& rng, const FeatureEncoder& enc, std::span<const Transaction> history,
                                   std::size_t i) {
  Transaction t = injection_template(history, i);
  t.amount = uniform(rng, enc.amount_min, enc.amount_max);
  t.category_id = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(enc.num_categories)));
  const auto sod = static_cast<std::int64_t>(uniform_index(rng, 86400));
  t.timestamp = place_timestamp(history[i - 1].timestamp, history[i].timestamp, sod);
  return make_candidate(enc, history, i, std::move(t));
}

// ---------------------------------------------------------------------------
// Forecaster.

struct ForecasterConfig {
  std::size_t window = 10;
  std::vector<std::size_t> hidden{32, 32};
  nn::TrainConfig train{20, 32, 1e-3, 0};
};

inline nlohmann::json to_json(const ForecasterConfig& c) {
  return {{"window", c.window}, {"hidden", c.hidden}, {"train", nn::to_json(c.train)}};
}

inline void from_json(const nlohmann::json& j, ForecasterConfig& c) {
  c.window = j.value("window", c.window);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("train")) nn::from_json(j.at("train"), c.train);
  require(c.window >= 1, ErrorCategory::config, "forecaster.window must be >= 1");
  require(!c.hidden.empty(), ErrorCategory::config, "forecaster.hidden must list at least one layer");
}

/// Sequence-to-value LSTM predicting the normalized amount of the next
/// transaction from the encoded preceding ones. Contexts shorter than the
/// window are left-padded with their earliest row.
class Forecaster {
 public:
  Forecaster() = default;
  Forecaster(FeatureEncoder encoder, ForecasterConfig config, std::uint64_t seed)
      : encoder_(std::move(encoder)), config_(std::move(config)) {
    Rng rng(derive_seed(seed, 0xf0c));
    std::size_t in = encoder_.width();
    for (std::size_t k = 0; k < config_.hidden.size(); ++k) {
      lstms_.emplace_back(in, config_.hidden[k], rng, "lstm" + std::to_string(k));
      in = config_.hidden[k];
    }
    out_ = nn::Dense(in, 1, nn::Activation::linear, rng, "out");
  }

  nn::Var forward(nn::Tape& t, std::span<const nn::Var> steps) const {
    std::vector<nn::Var> seq(steps.begin(), steps.end());
    for (const auto& l : lstms_) seq = l.forward(t, seq);
    return out_.forward(t, seq.back());
  }

  /// Left-padded n x width context ending just before row `end` of `h`.
  std::vector<double> context(const EncodedHistory& h, std::size_t end) const {
    require(end >= 1 && end <= h.rows, ErrorCategory::invalid_argument, "forecaster: needs at least one preceding transaction");
    const std::size_t n = config_.window, w = h.width;
    std::vector<double> out(n * w);
    const std::size_t have = std::min(end, n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t src = k + have < n ? end - have : end - n + k;
      std::copy_n(h.data.data() + src * w, w, out.data() + k * w);
    }
    return out;
  }

  /// Normalized predictions for window-major contexts.
  std::vector<double> predict_normalized(std::span<const double> contexts, std::size_t count) const {
    nn::Tape t(false);
    std::vector<nn::Var> steps;
    for (auto& s : detail::step_tensors(contexts, count, config_.window, encoder_.width()))
      steps.push_back(t.constant(std::move(s)));
    return nn::to_vector(t.value(forward(t, steps)).values);
  }

  /// Predicted amount (currency units) of the transaction following
  /// history[0..i).
  double predict_amount(std::span<const Transaction> history, std::size_t i) const {
    require(i >= 1 && i <= history.size(), ErrorCategory::invalid_argument,
            "forecaster: needs at least one transaction before position " + std::to_string(i));
    const std::size_t begin = i > config_.window ? i - config_.window : 0;
    EncodedHistory h = encode_rows(encoder_, history, begin, i);
    return encoder_.decode_amount(predict_normalized(context(h, h.rows), 1)[0]);
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> ps;
    for (auto& l : lstms_) l.collect(ps);
    out_.collect(ps);
    return ps;
  }

  const FeatureEncoder& encoder() const { return encoder_; }
  const ForecasterConfig& config() const { return config_; }
  std::size_t window() const { return config_.window; }
  std::vector<double> train_curve;

 private:
  FeatureEncoder encoder_;
  ForecasterConfig config_;
  std::vector<nn::Lstm> lstms_;
  nn::Dense out_;
};

/// Trains on every (context, next amount) pair of every user, MAE loss.
inline Forecaster train_forecaster(const Dataset& split, const FeatureEncoder& encoder, const ForecasterConfig& config,
                                   std::uint64_t seed) {
  Forecaster f(encoder, config, seed);
  const std::size_t n = config.window, w = encoder.width();
  std::vector<double> contexts, targets;
  for (const auto& u : split.users) {
    if (u.size() < 2) continue;
    EncodedHistory h = encoder.encode_history(u);
    for (std::size_t j = 1; j < h.rows; ++j) {
      auto c = f.context(h, j);
      contexts.insert(contexts.end(), c.begin(), c.end());
      targets.push_back(h.data[j * w + encoder.amount_index()]);
    }
  }
  require(!targets.empty(), ErrorCategory::invalid_argument, "train_forecaster: no user has two transactions");
  nn::TrainConfig tc = config.train;
  tc.seed = derive_seed(seed, 0xf7a, config.train.seed);
  auto params = f.parameters();
  f.train_curve = nn::train_loop(params, targets.size(), tc, [&](nn::Tape& t, std::span<const std::size_t> idx) {
    const std::size_t B = idx.size();
    std::vector<nn::Var> steps;
    for (std::size_t k = 0; k < n; ++k) {
      nn::Tensor x = nn::Tensor::matrix(B, w);
      for (std::size_t b = 0; b < B; ++b) std::copy_n(contexts.data() + (idx[b] * n + k) * w, w, x.values.data() + b * w);
      steps.push_back(t.constant(std::move(x)));
    }
    nn::Tensor y = nn::Tensor::matrix(B, 1);
    for (std::size_t b = 0; b < B; ++b) y.values[b] = targets[idx[b]];
    return nn::loss(t, nn::LossKind::mae, f.forward(t, steps), t.constant(std::move(y)));
  });
  return f;
}

inline void save_forecaster(Forecaster& f, const std::string& path) {
  auto params = f.parameters();
  write_json(path, nn::save_parameters(params));
  write_json(path + ".meta.json", {{"format", "fraudability-forecaster"},
                                   {"version", 1},
                                   {"config", to_json(f.config())},
                                   {"train_curve", f.train_curve},
                                   {"encoder", to_json(f.encoder())}});
}

inline Forecaster load_forecaster(const std::string& path) {
  const nlohmann::json meta = read_json(path + ".meta.json");
  const nlohmann::json params_json = read_json(path);
  try {
    require(meta.at("format").get<std::string>() == "fraudability-forecaster", ErrorCategory::parse,
            "forecaster sidecar: wrong format tag");
    ForecasterConfig config;
    from_json(meta.at("config"), config);
    Forecaster f(encoder_from_json(meta.at("encoder")), config, 0);
    auto params = f.parameters();
    nn::load_parameters(params, params_json);
    f.train_curve = meta.at("train_curve").get<std::vector<double>>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::parse, path + ".meta.json: " + e.what());
  }
}

/// Template with the forecast amount.
inline Candidate craft_predicted_amount(const Forecaster& f, const FeatureEncoder& enc,
                                        std::span<const Transaction> history, std::size_t i) {
  Transaction t = injection_template(history, i);
  t.amount = std::max(0.0, f.predict_amount(history, i));
  return make_candidate(enc, history, i, std::move(t));
}

// ---------------------------------------------------------------------------
// Adversarial crafting against the surrogate.

enum class Objective { late_detection, max_profit };

/// Surrogate outcome of `t` injected at `i`.
inline DetectionOutcome surrogate_outcome(const SurrogateDetector& d, std::span<const Transaction> history,
                                          std::size_t i, const Transaction& t) {
  const auto injected = inject(history, i, t);
  return detect_injected(d, injected, i, t.amount);
}

/// Surrogate outcomes of several alternative transactions injected at `i`,
/// scored in one batch.
inline std::vector<DetectionOutcome> surrogate_outcomes(const SurrogateDetector& d, std::span<const Transaction> history,
                                                        std::size_t i, std::span<const Transaction> alternatives) {
  require(d.calibrated(), ErrorCategory::state, "detector threshold not calibrated");
  const std::size_t n = d.window(), w = d.encoder().width();
  const auto starts = windows_containing(history.size() + 1, i, n);
  const std::size_t begin = starts.front(), end = starts.back() + n;
  std::vector<double> buf;
  buf.reserve(alternatives.size() * starts.size() * n * w);
  for (const auto& t : alternatives) {
    const auto injected = inject(history, i, t);
    const EncodedHistory h = encode_rows(d.encoder(), injected, begin, end);
    for (std::size_t s : starts)
      buf.insert(buf.end(), h.data.begin() + static_cast<std::ptrdiff_t>((s - begin) * w),
                 h.data.begin() + static_cast<std::ptrdiff_t>((s - begin + n) * w));
  }
  const auto errs = d.reconstruction_errors(buf, alternatives.size() * starts.size());
  const double alpha = d.threshold();
  std::vector<DetectionOutcome> out;
  for (std::size_t c = 0; c < alternatives.size(); ++c) {
    DetectionOutcome o{false, n, alternatives[c].amount};
    for (std::size_t k = 0; k < starts.size(); ++k)
      if (errs[c * starts.size() + k] > alpha) {
        o = {true, starts[k] + n - 1 - i, alternatives[c].amount};
        break;
      }
    out.push_back(o);
  }
  return out;
}

namespace detail {

/// Windows of the injected history that contain row i, window-major, plus the
/// offset of each window's injected row in the flat buffer.
struct InjectedWindows {
  std::vector<double> values;
  std::vector<std::size_t> row_offsets;
  std::size_t count = 0;
};

inline InjectedWindows injected_windows(const FeatureEncoder& enc, std::span<const Transaction> injected, std::size_t i,
                                        std::size_t n) {
  const auto starts = windows_containing(injected.size(), i, n);
  const std::size_t begin = starts.front(), end = starts.back() + n, w = enc.width();
  const EncodedHistory h = encode_rows(enc, injected, begin, end);
  InjectedWindows out;
  out.count = starts.size();
  for (std::size_t s : starts) {
    out.row_offsets.push_back(out.values.size() + (i - s) * w);
    out.values.insert(out.values.end(), h.data.begin() + static_cast<std::ptrdiff_t>((s - begin) * w),
                      h.data.begin() + static_cast<std::ptrdiff_t>((s - begin + n) * w));
  }
  return out;
}

inline PerturbationMask injected_row_mask(const FeatureEncoder& enc, const InjectedWindows& win) {
  const auto row_mask = enc.mutable_mask();
  const std::size_t w = enc.width();
  PerturbationMask m{std::vector<std::uint8_t>(win.values.size(), 0), std::vector<std::uint8_t>(win.values.size(), 0)};
  for (std::size_t off : win.row_offsets)
    for (std::size_t j = 0; j < w; ++j) {
      m.perturb[off + j] = row_mask[j];
      m.unit_range[off + j] = enc.is_category_coordinate(j) ? 0 : 1;
    }
  return m;
}

/// Turns a perturbed encoded row back into a transaction. Fields whose
/// coordinates did not move are kept from `t`.
inline Transaction decode_row(const FeatureEncoder& enc, std::span<const Transaction> history, std::size_t i,
                              const Transaction& t, std::span<const double> original, std::span<const double> row) {
  Transaction out = t;
  if (row[enc.amount_index()] != original[enc.amount_index()]) out.amount = enc.decode_amount(row[enc.amount_index()]);
  bool category_moved = false;
  for (std::size_t k = 0; k < enc.embed_dim; ++k)
    category_moved |= row[enc.category_offset() + k] != original[enc.category_offset() + k];
  if (category_moved) out.category_id = enc.nearest_category(row.subspan(enc.category_offset(), enc.embed_dim));
  const std::size_t hs = enc.hour_sin_index(), hc = enc.hour_cos_index();
  if (row[hs] != original[hs] || row[hc] != original[hc])
    out.timestamp = place_timestamp(history[i - 1].timestamp, history[i].timestamp,
                                    FeatureEncoder::decode_second_of_day(row[hs], row[hc]));
  return out;
}

}  // namespace detail

/// Candidate pool of the adversarial crafting: the unperturbed `t` followed
/// by one candidate per eps, each with its surrogate outcome.
inline std::vector<Candidate> adversarial_pool(const SurrogateDetector& d, std::span<const Transaction> history,
                                               std::size_t i, const Transaction& t, const AttackConfig& config) {
  require_position(history, i);
  require(d.calibrated(), ErrorCategory::state, "adversarial crafting needs a calibrated surrogate");
  const FeatureEncoder& enc = d.encoder();
  const std::size_t n = d.window(), w = enc.width();
  const auto injected = inject(history, i, t);
  const auto win = detail::injected_windows(enc, injected, i, n);
  const auto mask = detail::injected_row_mask(enc, win);
  const std::span<const double> original(win.values.data() + win.row_offsets.front(), w);

  std::vector<Candidate> pool;
  pool.push_back(make_candidate(enc, history, i, t));

  auto gradient = [&](std::span<const double> x, std::vector<double>& g) { d.error_gradient(x, win.count, g); };
  std::vector<double> g0;
  if (config.algorithm == AdversarialAlgorithm::fgsm) gradient(win.values, g0);

  for (double eps : config.epsilons) {
    std::vector<double> x;
    if (config.algorithm == AdversarialAlgorithm::fgsm) {
      x = fgsm(win.values, g0, mask, eps, config.form);
    } else {
      const auto sched = bim_schedule(eps, config);
      x = bim(win.values, gradient, mask, eps, sched.step, sched.iterations, config.form);
    }
    // Mean of the perturbed copies, accumulated as offsets so unmoved
    // coordinates stay bit-identical.
    std::vector<double> row(original.begin(), original.end());
    for (std::size_t j = 0; j < w; ++j) {
      if (!mask.perturb[win.row_offsets.front() + j]) continue;
      double delta = 0.0;
      for (std::size_t off : win.row_offsets) delta += x[off + j] - original[j];
      row[j] += delta / static_cast<double>(win.count);
    }
    Transaction decoded = detail::decode_row(enc, history, i, t, original, row);
    Candidate c = make_candidate(enc, history, i, decoded);
    c.epsilon = eps;
    pool.push_back(std::move(c));
  }
  std::vector<Transaction> txs;
  for (const auto& c : pool) txs.push_back(c.transaction);
  const auto outcomes = surrogate_outcomes(d, history, i, txs);
  for (std::size_t k = 0; k < pool.size(); ++k) pool[k].surrogate = outcomes[k];
  return pool;
}

/// LateDetect: latest surrogate detection time, then larger amount, then
/// smaller eps. MaxProfit: largest amount among surrogate-undetected
/// candidates (then smaller eps); when all are detected, largest amount
/// overall, which then carries its detected outcome.
inline Candidate select_candidate(std::span<const Candidate> pool, Objective objective) {
  require(!pool.empty(), ErrorCategory::invalid_argument, "select_candidate: empty pool");
  for (const auto& c : pool) require(c.surrogate.has_value(), ErrorCategory::state, "select_candidate: candidate not evaluated");
  auto better = [&](const Candidate& a, const Candidate& b) {
    if (objective == Objective::late_detection && a.surrogate->detection_time != b.surrogate->detection_time)
      return a.surrogate->detection_time > b.surrogate->detection_time;
    if (objective == Objective::max_profit && a.surrogate->detected != b.surrogate->detected) return !a.surrogate->detected;
    if (a.transaction.amount != b.transaction.amount) return a.transaction.amount > b.transaction.amount;
    return a.epsilon < b.epsilon;
  };
  const Candidate* best = &pool.front();
  for (const auto& c : pool)
    if (better(c, *best)) best = &c;
  return *best;
}

inline Candidate craft_adversarial(const Transaction& t, std::span<const Transaction> history, std::size_t i,
                                   const SurrogateDetector& d, Objective objective, const AttackConfig& config) {
  const auto pool = adversarial_pool(d, history, i, t, config);
  return select_candidate(pool, objective);
}

inline Objective objective_of(Strategy s) {
  require(is_adversarial(s), ErrorCategory::invalid_argument, to_string(s) + " is not an adversarial strategy");
  return s == Strategy::adversarial_late_detection ? Objective::late_detection : Objective::max_profit;
}

/// One JSON-lines audit record.
inline nlohmann::json candidate_to_json(const std::string& user_id, std::size_t position, Strategy strategy,
                                        const Candidate& c) {
  nlohmann::json j{{"user_id", user_id},
                   {"position", position},
                   {"strategy", to_string(strategy)},
                   {"epsilon", c.epsilon},
                   {"transaction", to_json(c.transaction)},
                   {"encoded", c.encoded}};
  if (c.surrogate)
    j["surrogate"] = {{"detected", c.surrogate->detected}, {"detection_time", c.surrogate->detection_time}};
  return j;
}

}  // namespace fraudability
