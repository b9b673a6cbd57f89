#pragma once

// Seeded synthetic purchase histories and dataset I/O.
//
// Users are drawn from a mixture of spending archetypes: log-normal amounts,
// Dirichlet-drawn category preferences, gamma inter-arrival gaps and an
// hour-of-day activity profile. Histories are benign by construction.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"

namespace fraudability {

struct Transaction {
  std::string user_id;
  std::int64_t timestamp = 0;  // seconds since epoch
  double amount = 0.0;         // euros
  int category_id = 0;
  int payment_type = 0;
  int age = 18;
  std::string ip_hash;

  bool operator==(const Transaction&) const = default;
};

struct UserHistory {
  std::string user_id;
  std::vector<Transaction> transactions;  // ascending timestamp

  std::size_t size() const { return transactions.size(); }
  bool operator==(const UserHistory&) const = default;
};

struct Dataset {
  std::vector<UserHistory> users;
  int num_categories = 0;
  int num_payment_types = 0;
  std::uint64_t seed = 0;

  std::size_t num_transactions() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.size();
    return n;
  }
  bool operator==(const Dataset&) const = default;
};

struct UserArchetype {
  std::string name;
  double mixture_weight = 1.0;
  double amount_location = 3.5;  // mean of log(amount)
  double amount_scale = 0.5;     // std of log(amount)
  double amount_location_jitter = 0.3;
  std::vector<double> category_weights;  // empty means uniform over the catalog
  double category_concentration = 1.0;   // Dirichlet concentration around category_weights
  double interarrival_shape = 1.0;       // gamma shape of gaps, seconds
  double interarrival_rate = 1.0 / 172800.0;
  std::array<double, 24> activity_hours{};  // unnormalized; all-zero means uniform
  // Each user draws a personal peak hour from activity_hours and transacts
  // around it with this standard deviation (hours). Ignored when hours are uniform.
  double hour_spread = 1.5;
  // Dirichlet concentration of a user's weekday preference; large is near uniform.
  double weekday_concentration = 50.0;
};

struct GenerationConfig {
  std::size_t num_users = 400;
  std::size_t min_transactions = 30;
  double mean_transactions = 32.45;
  std::size_t max_transactions = 80;
  int num_categories = 12;
  int num_payment_types = 4;
  std::int64_t start_timestamp = 1262304000;  // 2010-01-01T00:00:00Z
  double session_rotation_probability = 0.1;
  double preferred_payment_probability = 0.97;
  int min_age = 18;
  int max_age = 90;
  std::vector<UserArchetype> archetypes;
};

namespace detail {

inline std::array<double, 24> hour_profile(std::initializer_list<std::pair<int, double>> peaks,
                                           double floor_weight) {
  std::array<double, 24> h{};
  h.fill(floor_weight);
  for (auto [hour, w] : peaks) h[static_cast<std::size_t>(hour % 24)] += w;
  return h;
}

inline std::string random_token(Rng& rng) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s(64, '0');
  for (std::size_t i = 0; i < 64; i += 16) {
    std::uint64_t v = rng();
    for (std::size_t j = 0; j < 16; ++j) {
      s[i + j] = kHex[v & 0xF];
      v >>= 4;
    }
  }
  return s;
}

template <typename T>
std::size_t draw_categorical(Rng& rng, const std::vector<T>& weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return weights.size() - 1;
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Four archetypes spanning routine, high-value, erratic and nocturnal spenders.
inline std::vector<UserArchetype> default_archetypes() {
  std::vector<UserArchetype> a(4);

  a[0].name = "routine";
  a[0].mixture_weight = 0.4;
  a[0].amount_location = std::log(25.0);
  a[0].amount_scale = 0.25;
  a[0].category_concentration = 0.1;
  a[0].interarrival_shape = 4.0;
  a[0].interarrival_rate = 4.0 / (2.0 * 86400.0);
  a[0].activity_hours = detail::hour_profile({{8, 3.0}, {12, 4.0}, {18, 3.0}}, 0.05);
  a[0].hour_spread = 0.7;
  a[0].weekday_concentration = 0.1;

  a[1].name = "high_value";
  a[1].mixture_weight = 0.2;
  a[1].amount_location = std::log(220.0);
  a[1].amount_scale = 0.45;
  a[1].category_concentration = 0.1;
  a[1].interarrival_shape = 2.0;
  a[1].interarrival_rate = 2.0 / (4.0 * 86400.0);
  a[1].activity_hours = detail::hour_profile({{10, 2.0}, {14, 2.0}, {20, 3.0}}, 0.2);
  a[1].hour_spread = 0.7;
  a[1].weekday_concentration = 0.1;

  a[2].name = "erratic";
  a[2].mixture_weight = 0.1;
  a[2].amount_location = std::log(70.0);
  a[2].amount_scale = 1.0;
  a[2].category_concentration = 0.5;
  a[2].interarrival_shape = 0.6;
  a[2].interarrival_rate = 0.6 / (3.0 * 86400.0);
  a[2].activity_hours = a[1].activity_hours;
  a[2].hour_spread = 2.5;
  a[2].weekday_concentration = 0.5;

  a[3].name = "nocturnal";
  a[3].mixture_weight = 0.2;
  a[3].amount_location = std::log(40.0);
  a[3].amount_scale = 0.4;
  a[3].category_concentration = 0.1;
  a[3].interarrival_shape = 2.0;
  a[3].interarrival_rate = 2.0 / (2.5 * 86400.0);
  a[3].activity_hours = detail::hour_profile({{23, 3.0}, {0, 3.0}, {1, 2.0}, {2, 1.0}}, 0.05);
  a[3].hour_spread = 0.7;
  a[3].weekday_concentration = 0.1;
  return a;
}

inline GenerationConfig default_generation_config() {
  GenerationConfig c;
  c.archetypes = default_archetypes();
  return c;
}

inline void validate(const GenerationConfig& c) {
  require(c.num_users >= 1, ErrorCategory::config, "num_users must be >= 1");
  require(c.min_transactions >= 30, ErrorCategory::config, "min_transactions must be >= 30");
  require(c.max_transactions >= c.min_transactions, ErrorCategory::config,
          "max_transactions must be >= min_transactions");
  require(c.mean_transactions >= static_cast<double>(c.min_transactions) &&
              c.mean_transactions <= static_cast<double>(c.max_transactions),
          ErrorCategory::config, "mean_transactions must lie in [min_transactions, max_transactions]");
  require(c.num_categories >= 1 && c.num_payment_types >= 1, ErrorCategory::config,
          "catalog sizes must be >= 1");
  require(c.min_age >= 0 && c.max_age >= c.min_age, ErrorCategory::config, "invalid age range");
  require(c.session_rotation_probability >= 0.0 && c.session_rotation_probability <= 1.0,
          ErrorCategory::config, "session_rotation_probability must lie in [0,1]");
  require(c.preferred_payment_probability >= 0.0 && c.preferred_payment_probability <= 1.0, ErrorCategory::config,
          "preferred_payment_probability must lie in [0,1]");
  require(!c.archetypes.empty(), ErrorCategory::config, "at least one archetype is required");
  for (const auto& a : c.archetypes) {
    const std::string tag = "archetype '" + a.name + "': ";
    require(a.mixture_weight > 0.0, ErrorCategory::config, tag + "mixture_weight must be > 0");
    require(a.amount_scale > 0.0 && a.interarrival_shape > 0.0 && a.interarrival_rate > 0.0 &&
                a.category_concentration > 0.0,
            ErrorCategory::config, tag + "scale, shape, rate and concentration must be > 0");
    require(a.amount_location_jitter >= 0.0, ErrorCategory::config, tag + "negative jitter");
    require(a.hour_spread > 0.0 && a.weekday_concentration > 0.0, ErrorCategory::config,
            tag + "hour_spread and weekday_concentration must be > 0");
    if (!a.category_weights.empty()) {
      require(a.category_weights.size() == static_cast<std::size_t>(c.num_categories),
              ErrorCategory::config, tag + "category_weights size differs from num_categories");
      double s = 0.0;
      for (double w : a.category_weights) {
        require(w > 0.0, ErrorCategory::config, tag + "category weights must be > 0");
        s += w;
      }
      require(std::abs(s - 1.0) <= 1e-9, ErrorCategory::config, tag + "category_weights must sum to 1");
    }
    for (double h : a.activity_hours)
      require(h >= 0.0, ErrorCategory::config, tag + "activity hour weights must be >= 0");
  }
}

inline Dataset generate_dataset(const GenerationConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(derive_seed(seed, 0x5e7));

  Dataset ds;
  ds.num_categories = config.num_categories;
  ds.num_payment_types = config.num_payment_types;
  ds.seed = seed;
  ds.users.reserve(config.num_users);

  std::vector<double> mixture;
  for (const auto& a : config.archetypes) mixture.push_back(a.mixture_weight);

  const double extra_mean = config.mean_transactions - static_cast<double>(config.min_transactions);
  const auto ncat = static_cast<std::size_t>(config.num_categories);

  for (std::size_t u = 0; u < config.num_users; ++u) {
    const UserArchetype& arch = config.archetypes[detail::draw_categorical(rng, mixture)];

    std::ostringstream id;
    id << "u" << std::setw(6) << std::setfill('0') << u;
    UserHistory hist;
    hist.user_id = id.str();

    std::size_t count = config.min_transactions;
    if (extra_mean > 0.0) {
      std::poisson_distribution<long> extra(extra_mean);
      count += static_cast<std::size_t>(extra(rng));
    }
    count = std::min(count, config.max_transactions);

    std::normal_distribution<double> jitter(0.0, 1.0);
    const double loc = arch.amount_location + arch.amount_location_jitter * jitter(rng);
    std::lognormal_distribution<double> amount_dist(loc, arch.amount_scale);

    std::vector<double> cat_pref(ncat);
    for (std::size_t k = 0; k < ncat; ++k) {
      double base = arch.category_weights.empty() ? 1.0 / static_cast<double>(ncat) : arch.category_weights[k];
      std::gamma_distribution<double> g(arch.category_concentration * base * static_cast<double>(ncat), 1.0);
      cat_pref[k] = g(rng) + 1e-12;
    }

    std::vector<double> hours(arch.activity_hours.begin(), arch.activity_hours.end());
    const bool uniform_hours = std::accumulate(hours.begin(), hours.end(), 0.0) <= 0.0;
    const auto peak_hour = uniform_hours ? 0 : static_cast<std::int64_t>(detail::draw_categorical(rng, hours));
    std::normal_distribution<double> hour_noise(0.0, arch.hour_spread);

    std::vector<double> weekday_pref(7);
    for (auto& w : weekday_pref) {
      std::gamma_distribution<double> g(arch.weekday_concentration, 1.0);
      w = g(rng) + 1e-12;
    }

    const int preferred_payment = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(config.num_payment_types)));
    const int age = config.min_age + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(config.max_age - config.min_age + 1)));

    std::gamma_distribution<double> gap_dist(arch.interarrival_shape, 1.0 / arch.interarrival_rate);
    double day_clock = static_cast<double>(config.start_timestamp) + uniform(rng, 0.0, 30.0 * 86400.0);
    std::string session = detail::random_token(rng);

    hist.transactions.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
      if (t > 0) day_clock += gap_dist(rng);
      // Move forward to the next occurrence of a preferred weekday.
      const auto target = static_cast<std::int64_t>(detail::draw_categorical(rng, weekday_pref));
      const std::int64_t days = static_cast<std::int64_t>(std::floor(day_clock / 86400.0));
      const std::int64_t shift = ((target - (days + 3) % 7) % 7 + 7) % 7;  // day 0 was a Thursday
      if (shift > 0) day_clock = static_cast<double>((days + shift) * 86400);
      Transaction tx;
      tx.user_id = hist.user_id;
      const auto day = static_cast<std::int64_t>(std::floor(day_clock / 86400.0)) * 86400;
      const std::int64_t hour =
          uniform_hours ? static_cast<std::int64_t>(uniform_index(rng, 24))
                        : ((peak_hour + static_cast<std::int64_t>(std::llround(hour_noise(rng)))) % 24 + 24) % 24;
      tx.timestamp = day + hour * 3600 + static_cast<std::int64_t>(uniform_index(rng, 3600));
      tx.amount = std::round(amount_dist(rng) * 100.0) / 100.0;
      tx.category_id = static_cast<int>(detail::draw_categorical(rng, cat_pref));
      tx.payment_type = uniform01(rng) < config.preferred_payment_probability
                            ? preferred_payment
                            : static_cast<int>(uniform_index(rng, static_cast<std::size_t>(config.num_payment_types)));
      tx.age = age;
      if (t > 0 && uniform01(rng) < config.session_rotation_probability) session = detail::random_token(rng);
      tx.ip_hash = session;
      hist.transactions.push_back(std::move(tx));
    }
    std::stable_sort(hist.transactions.begin(), hist.transactions.end(),
                     [](const Transaction& a, const Transaction& b) { return a.timestamp < b.timestamp; });
    ds.users.push_back(std::move(hist));
  }
  return ds;
}

/// Size of a knowledge split. Truncation reproduces the published
/// 6405 -> 1921/1281/320 user counts for 30%/20%/5%.
inline std::size_t split_size(double fraction, std::size_t total) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
}

/// Partitions users into splits of the requested fractions. With `disjoint`
/// the splits take consecutive runs of one seeded permutation; otherwise every
/// split is a prefix of that permutation, so smaller splits nest in larger ones.
inline std::vector<Dataset> split_knowledge(const Dataset& dataset, std::span<const double> fractions,
                                            std::uint64_t seed, bool disjoint = true) {
  require(!fractions.empty(), ErrorCategory::config, "at least one split fraction is required");
  const std::size_t n = dataset.users.size();
  double sum = 0.0;
  for (double f : fractions) {
    require(f > 0.0 && f <= 1.0, ErrorCategory::config, "split fractions must lie in (0,1]");
    sum += f;
  }
  require(!disjoint || sum <= 1.0 + 1e-9, ErrorCategory::config,
          "disjoint split fractions sum to more than 1");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5b1));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Dataset> out;
  std::size_t cursor = 0;
  for (double f : fractions) {
    Dataset part;
    part.num_categories = dataset.num_categories;
    part.num_payment_types = dataset.num_payment_types;
    part.seed = dataset.seed;
    const std::size_t size = split_size(f, n);
    const std::size_t begin = disjoint ? cursor : 0;
    for (std::size_t k = begin; k < begin + size && k < n; ++k) part.users.push_back(dataset.users[order[k]]);
    if (disjoint) cursor += size;
    out.push_back(std::move(part));
  }
  return out;
}

/// Users of `dataset` whose ids are not in any of `exclude`.
inline Dataset complement(const Dataset& dataset, std::span<const Dataset> exclude) {
  std::unordered_set<std::string> ids;
  for (const auto& d : exclude)
    for (const auto& u : d.users) ids.insert(u.user_id);
  Dataset out;
  out.num_categories = dataset.num_categories;
  out.num_payment_types = dataset.num_payment_types;
  out.seed = dataset.seed;
  for (const auto& u : dataset.users)
    if (!ids.count(u.user_id)) out.users.push_back(u);
  return out;
}

// ---------------------------------------------------------------------------
// Config serialization.

inline nlohmann::json to_json(const UserArchetype& a) {
  return {{"name", a.name},
          {"mixture_weight", a.mixture_weight},
          {"amount_location", a.amount_location},
          {"amount_scale", a.amount_scale},
          {"amount_location_jitter", a.amount_location_jitter},
          {"category_weights", a.category_weights},
          {"category_concentration", a.category_concentration},
          {"interarrival_shape", a.interarrival_shape},
          {"interarrival_rate", a.interarrival_rate},
          {"activity_hours", a.activity_hours},
          {"hour_spread", a.hour_spread},
          {"weekday_concentration", a.weekday_concentration}};
}

inline void from_json(const nlohmann::json& j, UserArchetype& a) {
  a.name = j.value("name", a.name);
  a.mixture_weight = j.value("mixture_weight", a.mixture_weight);
  a.amount_location = j.value("amount_location", a.amount_location);
  a.amount_scale = j.value("amount_scale", a.amount_scale);
  a.amount_location_jitter = j.value("amount_location_jitter", a.amount_location_jitter);
  a.category_weights = j.value("category_weights", a.category_weights);
  a.category_concentration = j.value("category_concentration", a.category_concentration);
  a.interarrival_shape = j.value("interarrival_shape", a.interarrival_shape);
  a.interarrival_rate = j.value("interarrival_rate", a.interarrival_rate);
  a.activity_hours = j.value("activity_hours", a.activity_hours);
  a.hour_spread = j.value("hour_spread", a.hour_spread);
  a.weekday_concentration = j.value("weekday_concentration", a.weekday_concentration);
}

inline nlohmann::json to_json(const GenerationConfig& c) {
  nlohmann::json arch = nlohmann::json::array();
  for (const auto& a : c.archetypes) arch.push_back(to_json(a));
  return {{"num_users", c.num_users},
          {"min_transactions", c.min_transactions},
          {"mean_transactions", c.mean_transactions},
          {"max_transactions", c.max_transactions},
          {"num_categories", c.num_categories},
          {"num_payment_types", c.num_payment_types},
          {"start_timestamp", c.start_timestamp},
          {"session_rotation_probability", c.session_rotation_probability},
          {"preferred_payment_probability", c.preferred_payment_probability},
          {"min_age", c.min_age},
          {"max_age", c.max_age},
          {"archetypes", std::move(arch)}};
}

/// Missing keys keep their current values; a present `archetypes` array
/// replaces the whole list, each entry starting from an empty archetype.
inline void from_json(const nlohmann::json& j, GenerationConfig& c) {
  c.num_users = j.value("num_users", c.num_users);
  c.min_transactions = j.value("min_transactions", c.min_transactions);
  c.mean_transactions = j.value("mean_transactions", c.mean_transactions);
  c.max_transactions = j.value("max_transactions", c.max_transactions);
  c.num_categories = j.value("num_categories", c.num_categories);
  c.num_payment_types = j.value("num_payment_types", c.num_payment_types);
  c.start_timestamp = j.value("start_timestamp", c.start_timestamp);
  c.session_rotation_probability = j.value("session_rotation_probability", c.session_rotation_probability);
  c.preferred_payment_probability = j.value("preferred_payment_probability", c.preferred_payment_probability);
  c.min_age = j.value("min_age", c.min_age);
  c.max_age = j.value("max_age", c.max_age);
  if (j.contains("archetypes")) {
    c.archetypes.clear();
    for (const auto& a : j.at("archetypes")) {
      UserArchetype x;
      from_json(a, x);
      c.archetypes.push_back(std::move(x));
    }
  }
  validate(c);
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per transaction per line, plus
// `<path>.header.json` carrying catalog sizes and the generation seed.

inline std::string header_path(const std::string& path) { return path + ".header.json"; }

inline nlohmann::json to_json(const Transaction& t) {
  return nlohmann::json{{"user_id", t.user_id},           {"timestamp", t.timestamp}, {"amount", t.amount},
                        {"category_id", t.category_id},   {"payment_type", t.payment_type},
                        {"age", t.age},                   {"ip_hash", t.ip_hash}};
}

inline void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::io, "cannot write " + path);
  for (const auto& u : dataset.users)
    for (const auto& t : u.transactions) out << to_json(t).dump() << '\n';
  std::ofstream header(header_path(path), std::ios::binary);
  require(header.good(), ErrorCategory::io, "cannot write " + header_path(path));
  nlohmann::json h{{"format", "fraudability-dataset"},
                   {"version", 1},
                   {"num_users", dataset.users.size()},
                   {"num_transactions", dataset.num_transactions()},
                   {"num_categories", dataset.num_categories},
                   {"num_payment_types", dataset.num_payment_types},
                   {"seed", dataset.seed}};
  header << h.dump(2) << '\n';
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCategory::io, "cannot read " + path);

  Dataset ds;
  bool have_header = false;
  if (std::ifstream hin(header_path(path)); hin.good()) {
    try {
      auto h = nlohmann::json::parse(hin);
      ds.num_categories = h.at("num_categories").get<int>();
      ds.num_payment_types = h.at("num_payment_types").get<int>();
      ds.seed = h.at("seed").get<std::uint64_t>();
      have_header = true;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::parse, header_path(path) + ": " + e.what());
    }
  }

  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  int max_cat = -1, max_pay = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    Transaction t;
    try {
      auto j = nlohmann::json::parse(line);
      t.user_id = j.at("user_id").get<std::string>();
      t.timestamp = j.at("timestamp").get<std::int64_t>();
      t.amount = j.at("amount").get<double>();
      t.category_id = j.at("category_id").get<int>();
      t.payment_type = j.at("payment_type").get<int>();
      t.age = j.at("age").get<int>();
      t.ip_hash = j.at("ip_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::parse, where + e.what());
    }
    require(std::isfinite(t.amount) && t.amount >= 0.0, ErrorCategory::parse, where + "negative or non-finite amount");
    require(t.timestamp >= 0, ErrorCategory::parse, where + "negative timestamp");
    require(t.category_id >= 0 && t.payment_type >= 0, ErrorCategory::parse, where + "negative categorical code");
    if (have_header) {
      require(t.category_id < ds.num_categories, ErrorCategory::parse, where + "category_id outside catalog");
      require(t.payment_type < ds.num_payment_types, ErrorCategory::parse, where + "payment_type outside catalog");
    }
    max_cat = std::max(max_cat, t.category_id);
    max_pay = std::max(max_pay, t.payment_type);
    auto [it, inserted] = index.try_emplace(t.user_id, ds.users.size());
    if (inserted) ds.users.push_back(UserHistory{t.user_id, {}});
    ds.users[it->second].transactions.push_back(std::move(t));
  }
  if (!have_header) {
    ds.num_categories = max_cat + 1;
    ds.num_payment_types = max_pay + 1;
  }
  for (auto& u : ds.users)
    std::stable_sort(u.transactions.begin(), u.transactions.end(),
                     [](const Transaction& a, const Transaction& b) { return a.timestamp < b.timestamp; });
  return ds;
}

inline constexpr const char* kCsvHeader = "user_id,timestamp,amount,category_id,payment_type,age,ip_hash";

inline void export_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::io, "cannot write " + path);
  out << kCsvHeader << '\n';
  for (const auto& u : dataset.users)
    for (const auto& t : u.transactions)
      out << t.user_id << ',' << t.timestamp << ',' << detail::format_double(t.amount) << ',' << t.category_id << ','
          << t.payment_type << ',' << t.age << ',' << t.ip_hash << '\n';
}

/// Users with at least `min_transactions` records.
inline Dataset filter_min_transactions(const Dataset& dataset, std::size_t min_transactions) {
  Dataset out = dataset;
  std::erase_if(out.users, [&](const UserHistory& u) { return u.size() < min_transactions; });
  return out;
}

}  // namespace fraudability
