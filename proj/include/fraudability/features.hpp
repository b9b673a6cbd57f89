#pragma once

// Transaction encoding and user profiles.
//
// Encoded layout (|W| = 7 + 2*embed_dim):
//   amount | category embedding | payment embedding | age |
//   hour sin, hour cos | weekday sin, weekday cos | log time-since-previous
// Numeric coordinates are min-max scaled to [0,1]; sin/cos pairs are mapped
// from [-1,1] to [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"
#include "fraudability/synth.hpp"

namespace fraudability {

/// Row-major matrix of encoded transactions, one row per transaction.
struct EncodedHistory {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * width, width}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * width, width}; }
};

enum class ProfileStat : std::size_t { mean = 0, median = 1, stddev = 2, min = 3, max = 4 };
inline constexpr std::size_t kProfileStats = 5;
inline constexpr const char* kProfileStatNames[kProfileStats] = {"mu", "median", "sigma", "min", "max"};

/// 5 x |W| aggregate of a user's encoded transactions.
struct UserProfile {
  std::size_t width = 0;
  std::vector<double> stats;  // stats[stat * width + feature]

  double at(ProfileStat s, std::size_t feature) const {
    return stats[static_cast<std::size_t>(s) * width + feature];
  }

  /// Feature-major flattening: (mu, median, sigma, min, max) of feature 0, then feature 1, ...
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(stats.size());
    for (std::size_t f = 0; f < width; ++f)
      for (std::size_t s = 0; s < kProfileStats; ++s) out.push_back(stats[s * width + f]);
    return out;
  }
};

class FeatureEncoder {
 public:
  int num_categories = 0;
  int num_payment_types = 0;
  std::size_t embed_dim = 4;
  double amount_min = 0.0, amount_max = 0.0;
  double age_min = 0.0, age_max = 0.0;
  double log_gap_min = 0.0, log_gap_max = 0.0;
  std::vector<std::vector<double>> category_embeddings;
  std::vector<std::vector<double>> payment_embeddings;

  std::size_t width() const { return 7 + 2 * embed_dim; }
  std::size_t amount_index() const { return 0; }
  std::size_t category_offset() const { return 1; }
  std::size_t payment_offset() const { return 1 + embed_dim; }
  std::size_t age_index() const { return 1 + 2 * embed_dim; }
  std::size_t hour_sin_index() const { return 2 + 2 * embed_dim; }
  std::size_t hour_cos_index() const { return 3 + 2 * embed_dim; }
  std::size_t day_sin_index() const { return 4 + 2 * embed_dim; }
  std::size_t day_cos_index() const { return 5 + 2 * embed_dim; }
  std::size_t log_gap_index() const { return 6 + 2 * embed_dim; }

  bool is_category_coordinate(std::size_t j) const {
    return j >= category_offset() && j < category_offset() + embed_dim;
  }

  /// Attacker-controllable coordinates: amount, category embedding, temporal.
  std::vector<std::uint8_t> mutable_mask() const {
    std::vector<std::uint8_t> m(width(), 0);
    m[amount_index()] = 1;
    for (std::size_t k = 0; k < embed_dim; ++k) m[category_offset() + k] = 1;
    for (std::size_t j = hour_sin_index(); j <= log_gap_index(); ++j) m[j] = 1;
    return m;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> names{"amount"};
    for (std::size_t k = 0; k < embed_dim; ++k) names.push_back("category_emb" + std::to_string(k));
    for (std::size_t k = 0; k < embed_dim; ++k) names.push_back("payment_emb" + std::to_string(k));
    for (const char* n : {"age", "hour_sin", "hour_cos", "day_sin", "day_cos", "log_gap"}) names.emplace_back(n);
    return names;
  }

  double normalize_amount(double amount) const { return scale01(amount, amount_min, amount_max); }

  /// Inverse of the amount normalization for in-range values.
  double decode_amount(double normalized) const {
    return amount_min + std::clamp(normalized, 0.0, 1.0) * (amount_max - amount_min);
  }

  /// Category whose embedding is nearest (Euclidean) to `block`; ties go to the lower code.
  int nearest_category(std::span<const double> block) const {
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < num_categories; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < embed_dim; ++k) {
        double diff = block[k] - category_embeddings[static_cast<std::size_t>(c)][k];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  }

  /// Seconds into the day encoded by a scaled (sin, cos) hour pair.
  static std::int64_t decode_second_of_day(double sin01, double cos01) {
    double angle = std::atan2(2.0 * sin01 - 1.0, 2.0 * cos01 - 1.0);
    if (angle < 0.0) angle += 2.0 * std::numbers::pi;
    auto s = static_cast<std::int64_t>(std::llround(angle / (2.0 * std::numbers::pi) * 86400.0));
    return s % 86400;
  }

  static double log_gap(std::int64_t gap_seconds) { return std::log1p(static_cast<double>(std::max<std::int64_t>(0, gap_seconds))); }

  static int weekday(std::int64_t ts) {
    // 1970-01-01 was a Thursday; Monday = 0.
    std::int64_t days = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
    return static_cast<int>(((days + 3) % 7 + 7) % 7);
  }

  void encode_into(const Transaction& t, std::optional<std::int64_t> previous_timestamp, std::span<double> out) const {
    require(out.size() == width(), ErrorCategory::shape, "encode: output width mismatch");
    require(t.category_id >= 0 && t.category_id < num_categories, ErrorCategory::invalid_argument,
            "encode: unknown category " + std::to_string(t.category_id));
    require(t.payment_type >= 0 && t.payment_type < num_payment_types, ErrorCategory::invalid_argument,
            "encode: unknown payment type " + std::to_string(t.payment_type));
    out[amount_index()] = normalize_amount(t.amount);
    const auto& ce = category_embeddings[static_cast<std::size_t>(t.category_id)];
    const auto& pe = payment_embeddings[static_cast<std::size_t>(t.payment_type)];
    for (std::size_t k = 0; k < embed_dim; ++k) {
      out[category_offset() + k] = ce[k];
      out[payment_offset() + k] = pe[k];
    }
    out[age_index()] = scale01(static_cast<double>(t.age), age_min, age_max);
    const double sod = static_cast<double>(((t.timestamp % 86400) + 86400) % 86400);
    const double hour_angle = 2.0 * std::numbers::pi * sod / 86400.0;
    out[hour_sin_index()] = 0.5 * (std::sin(hour_angle) + 1.0);
    out[hour_cos_index()] = 0.5 * (std::cos(hour_angle) + 1.0);
    const double day_angle = 2.0 * std::numbers::pi * weekday(t.timestamp) / 7.0;
    out[day_sin_index()] = 0.5 * (std::sin(day_angle) + 1.0);
    out[day_cos_index()] = 0.5 * (std::cos(day_angle) + 1.0);
    const double lg = previous_timestamp ? log_gap(t.timestamp - *previous_timestamp) : 0.0;
    out[log_gap_index()] = scale01(lg, log_gap_min, log_gap_max);
  }

  std::vector<double> encode(const Transaction& t, std::optional<std::int64_t> previous_timestamp = std::nullopt) const {
    std::vector<double> v(width());
    encode_into(t, previous_timestamp, v);
    return v;
  }

  EncodedHistory encode_history(std::span<const Transaction> txs) const {
    EncodedHistory h{txs.size(), width(), std::vector<double>(txs.size() * width())};
    for (std::size_t i = 0; i < txs.size(); ++i)
      encode_into(txs[i], i == 0 ? std::nullopt : std::optional<std::int64_t>(txs[i - 1].timestamp), h.row(i));
    return h;
  }

  EncodedHistory encode_history(const UserHistory& u) const { return encode_history(std::span(u.transactions)); }

 private:
  static double scale01(double v, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  }
};

inline FeatureEncoder fit_encoder(const Dataset& dataset, std::size_t embed_dim, std::uint64_t seed) {
  require(dataset.num_transactions() > 0, ErrorCategory::invalid_argument, "fit_encoder: empty dataset");
  require(embed_dim >= 1, ErrorCategory::config, "fit_encoder: embed_dim must be >= 1");
  require(dataset.num_categories >= 1 && dataset.num_payment_types >= 1, ErrorCategory::invalid_argument,
          "fit_encoder: empty catalog");
  FeatureEncoder enc;
  enc.num_categories = dataset.num_categories;
  enc.num_payment_types = dataset.num_payment_types;
  enc.embed_dim = embed_dim;
  enc.amount_min = enc.age_min = enc.log_gap_min = INFINITY;
  enc.amount_max = enc.age_max = enc.log_gap_max = -INFINITY;
  for (const auto& u : dataset.users) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      const auto& t = u.transactions[i];
      enc.amount_min = std::min(enc.amount_min, t.amount);
      enc.amount_max = std::max(enc.amount_max, t.amount);
      enc.age_min = std::min(enc.age_min, static_cast<double>(t.age));
      enc.age_max = std::max(enc.age_max, static_cast<double>(t.age));
      double lg = i == 0 ? 0.0 : FeatureEncoder::log_gap(t.timestamp - u.transactions[i - 1].timestamp);
      enc.log_gap_min = std::min(enc.log_gap_min, lg);
      enc.log_gap_max = std::max(enc.log_gap_max, lg);
    }
  }
  Rng rng(derive_seed(seed, 0xe3b));
  auto table = [&](int rows) {
    std::vector<std::vector<double>> t(static_cast<std::size_t>(rows), std::vector<double>(embed_dim));
    for (auto& r : t)
      for (auto& x : r) x = uniform(rng, -0.5, 0.5);
    return t;
  };
  enc.category_embeddings = table(enc.num_categories);
  enc.payment_embeddings = table(enc.num_payment_types);
  return enc;
}

inline nlohmann::json to_json(const FeatureEncoder& e) {
  return {{"num_categories", e.num_categories}, {"num_payment_types", e.num_payment_types},
          {"embed_dim", e.embed_dim},           {"amount_min", e.amount_min},
          {"amount_max", e.amount_max},         {"age_min", e.age_min},
          {"age_max", e.age_max},               {"log_gap_min", e.log_gap_min},
          {"log_gap_max", e.log_gap_max},       {"category_embeddings", e.category_embeddings},
          {"payment_embeddings", e.payment_embeddings}};
}

inline FeatureEncoder encoder_from_json(const nlohmann::json& j) {
  FeatureEncoder e;
  try {
    e.num_categories = j.at("num_categories").get<int>();
    e.num_payment_types = j.at("num_payment_types").get<int>();
    e.embed_dim = j.at("embed_dim").get<std::size_t>();
    e.amount_min = j.at("amount_min").get<double>();
    e.amount_max = j.at("amount_max").get<double>();
    e.age_min = j.at("age_min").get<double>();
    e.age_max = j.at("age_max").get<double>();
    e.log_gap_min = j.at("log_gap_min").get<double>();
    e.log_gap_max = j.at("log_gap_max").get<double>();
    e.category_embeddings = j.at("category_embeddings").get<std::vector<std::vector<double>>>();
    e.payment_embeddings = j.at("payment_embeddings").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCategory::parse, std::string("feature encoder: ") + ex.what());
  }
  return e;
}

namespace detail {

inline double median_sorted(std::span<const double> sorted) {
  const std::size_t n = sorted.size();
  return n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

}  // namespace detail

/// Population statistics per encoded feature. Permutation invariant.
inline UserProfile build_profile(const EncodedHistory& encoded) {
  require(encoded.rows >= 2, ErrorCategory::invalid_argument, "build_profile: history needs >= 2 transactions");
  const std::size_t w = encoded.width, n = encoded.rows;
  UserProfile p{w, std::vector<double>(kProfileStats * w)};
  std::vector<double> col(n);
  for (std::size_t f = 0; f < w; ++f) {
    for (std::size_t i = 0; i < n; ++i) col[i] = encoded.data[i * w + f];
    std::sort(col.begin(), col.end());
    const double lo = col.front(), hi = col.back();
    // Accumulate offsets from the minimum over the sorted column: exact for
    // constant columns and independent of transaction order.
    double acc = 0.0;
    for (double x : col) acc += x - lo;
    const double mu = std::clamp(lo + acc / static_cast<double>(n), lo, hi);
    double ss = 0.0;
    for (double x : col) ss += (x - mu) * (x - mu);
    p.stats[0 * w + f] = mu;
    p.stats[1 * w + f] = detail::median_sorted(col);
    p.stats[2 * w + f] = std::sqrt(ss / static_cast<double>(n));
    p.stats[3 * w + f] = lo;
    p.stats[4 * w + f] = hi;
  }
  return p;
}

inline UserProfile build_profile(const FeatureEncoder& encoder, const UserHistory& history) {
  require(history.size() >= 2, ErrorCategory::invalid_argument, "build_profile: history needs >= 2 transactions");
  return build_profile(encoder.encode_history(history));
}

/// Column names of a flattened profile, e.g. `mu_amount`, `sigma_amount`.
inline std::vector<std::string> profile_column_names(const FeatureEncoder& encoder) {
  std::vector<std::string> out;
  for (const auto& f : encoder.feature_names())
    for (const char* s : kProfileStatNames) out.push_back(std::string(s) + "_" + f);
  return out;
}

}  // namespace fraudability
