// fraudability: command-line front end for data generation, model training,
// inject-and-test labeling, scoring, attacks and full experiments.
//
// Every command writes into a fresh run directory under --out named
// <UTC timestamp>-<command>-seed<seed>, next to the resolved config it ran with.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "fraudability/harness.hpp"
#include "fraudability/io.hpp"

namespace fs = std::filesystem;
using namespace fraudability;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::optional<std::size_t> threads;
  std::optional<std::string> strategy;
  std::optional<std::string> regressor;
  std::optional<double> knowledge_fraction;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> n;
  // Upstream artifacts.
  std::string data, detector, forecaster, labels, scorer, selection, timings;
  bool quiet = false;
};

/// Rejects keys the default config does not have, so typos fail loudly.
void check_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& path) {
  if (given.is_object()) {
    require(reference.is_object(), ErrorCategory::config, "config key " + path + " must not be an object");
    for (const auto& [key, value] : given.items()) {
      const std::string where = path.empty() ? key : path + "." + key;
      require(reference.contains(key), ErrorCategory::config, "unknown config key: " + where);
      check_keys(value, reference.at(key), where);
    }
  } else if (given.is_array() && reference.is_array() && !reference.empty() && reference.front().is_object()) {
    for (std::size_t k = 0; k < given.size(); ++k)
      check_keys(given[k], reference.front(), path + "[" + std::to_string(k) + "]");
  }
}

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    const nlohmann::json j = read_json(o.config_path);
    require(j.is_object(), ErrorCategory::config, o.config_path + ": config must be a JSON object");
    check_keys(j, to_json(ExperimentConfig{}), "");
    try {
      from_json(j, c);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::config, o.config_path + ": " + e.what());
    }
  }
  if (o.seed) c.seeds = {*o.seed};
  if (o.threads) c.threads = *o.threads;
  if (o.strategy) c.strategies = {strategy_from_string(*o.strategy)};
  if (o.regressor) c.regressors = {regressor_from_string(*o.regressor)};
  if (o.knowledge_fraction) c.knowledge_fraction = *o.knowledge_fraction;
  if (o.top_k) c.top_k = *o.top_k;
  if (o.n) c.detector.window = *o.n;
  validate(c);
  return c;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// Creates a directory that did not exist before, so no run touches another.
fs::path new_run_dir(const std::string& out, const std::string& command, const std::vector<std::uint64_t>& seeds) {
  std::string tag = "seed";
  for (std::size_t k = 0; k < seeds.size(); ++k) tag += (k ? "-" : "") + std::to_string(seeds[k]);
  const std::string base = utc_stamp() + "-" + command + "-" + tag;
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec, ErrorCategory::io, "cannot create " + out + ": " + ec.message());
  for (int k = 0; k < 1000; ++k) {
    fs::path dir = fs::path(out) / (k ? base + "-" + std::to_string(k) : base);
    if (fs::create_directory(dir, ec)) return dir;
    require(!ec, ErrorCategory::io, "cannot create " + dir.string() + ": " + ec.message());
  }
  fail(ErrorCategory::io, "no free run directory name under " + out);
}

struct Run {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  fs::path dir;

  std::string file(const std::string& name) const { return (dir / name).string(); }
};

Run start_run(const Options& o, const std::string& command) {
  Run r;
  r.config = resolve_config(o);
  r.seed = r.config.seeds.front();
  if (command != "experiment") r.config.seeds = {r.seed};
  r.dir = new_run_dir(o.out, command, r.config.seeds);
  write_json(r.file("resolved_config.json"), to_json(r.config));
  return r;
}

/// Path of an upstream artifact; a missing flag is a missing artifact.
const std::string& need(const std::string& path, const std::string& flag, const std::string& what,
                        const std::string& producer) {
  require(!path.empty(), ErrorCategory::missing_artifact,
          "missing " + what + ": pass " + flag + " <path> (written by " + producer + ")");
  return path;
}

Dataset need_dataset(const Options& o) { return load_dataset(need(o.data, "--data", "dataset", "synth as dataset.json")); }

SurrogateDetector need_detector(const Options& o) {
  return load_detector(need(o.detector, "--detector", "trained detector", "train-detector as detector.json"));
}

Forecaster need_forecaster(const Options& o) {
  return load_forecaster(need(o.forecaster, "--forecaster", "trained forecaster", "train-forecaster as forecaster.json"));
}

void log_line(const Options& o, const std::string& s) {
  if (!o.quiet) std::cerr << s << "\n";
}

void print_done(const Run& r) { std::cout << r.dir.string() << "\n"; }

Strategy single_strategy(const Run& r, const std::string& command) {
  require(r.config.strategies.size() == 1, ErrorCategory::invalid_argument,
          command + " runs one strategy: pass --strategy <name>");
  return r.config.strategies.front();
}

RegressorKind single_regressor(const Run& r, const std::string& command) {
  require(r.config.regressors.size() == 1, ErrorCategory::invalid_argument,
          command + " trains one regressor: pass --regressor <name>");
  return r.config.regressors.front();
}

std::string join_candidates(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_synth(const Options& o) {
  const Run r = start_run(o, "synth");
  const Dataset d = generate_dataset(r.config.generation, r.seed);
  save_dataset(d, r.file("dataset.json"));
  export_csv(d, r.file("transactions.csv"));
  write_json(r.file("summary.json"), {{"seed", r.seed}, {"users", d.users.size()}, {"transactions", d.num_transactions()}});
  print_done(r);
}

void cmd_train_detector(const Options& o) {
  const Dataset data = need_dataset(o);
  const Run r = start_run(o, "train-detector");
  const KnowledgeSplits s = split_for_attack(data, r.config, r.seed);
  SurrogateDetector d;
  const double seconds = timed([&] { d = train_attacker_surrogate(r.config, s, r.seed); });
  save_detector(d, r.file("detector.json"));
  const auto defender_windows = extract_windows(d.encoder(), s.defender, d.window());
  write_json(r.file("detector_report.json"), {{"alpha", d.threshold()},
                                             {"quantile", d.quantile()},
                                             {"train_curve", d.train_curve},
                                             {"attacker_train_users", s.attacker_train.users.size()},
                                             {"calibration_users", s.attacker_calibration.users.size()},
                                             {"defender_window_fpr", flagged_fraction(d, defender_windows)},
                                             {"seconds", seconds}});
  print_done(r);
}

void cmd_train_forecaster(const Options& o) {
  const Dataset data = need_dataset(o);
  const SurrogateDetector d = need_detector(o);
  const Run r = start_run(o, "train-forecaster");
  const KnowledgeSplits s = split_for_attack(data, r.config, r.seed);
  Forecaster f = train_attacker_forecaster(r.config, s, d, r.seed);
  save_forecaster(f, r.file("forecaster.json"));
  write_json(r.file("forecaster_report.json"), {{"train_curve", f.train_curve}});
  print_done(r);
}

/// Forecaster is only needed by strategies that start from a prediction.
std::optional<Forecaster> forecaster_for(const Options& o, const Run& r, Strategy s) {
  const bool needs = s == Strategy::predicted_amount ||
                     (is_adversarial(s) && r.config.attack.adversarial_start == Strategy::predicted_amount);
  if (!needs) return std::nullopt;
  return need_forecaster(o);
}

void cmd_label(const Options& o) {
  const Dataset data = need_dataset(o);
  const SurrogateDetector d = need_detector(o);
  const Run r = start_run(o, "label");
  const Strategy s = single_strategy(r, "label");
  const auto f = forecaster_for(o, r, s);
  const KnowledgeSplits split = split_for_attack(data, r.config, r.seed);
  const Attacker attacker{&d, f ? &*f : nullptr, r.config.attack, derive_seed(r.seed, 9)};
  Labels l;
  const double seconds = timed([&] { l = label_users(attacker, split.attacker, s, r.config.threads); });
  write_json(r.file("labels.json"), {{"strategy", to_string(s)},
                                     {"raw", l.raw},
                                     {"scaled", l.scaled},
                                     {"degenerate", l.degenerate},
                                     {"metrics", to_json(l.metrics)},
                                     {"seconds_per_user", seconds / static_cast<double>(split.attacker.users.size())}});
  std::string csv = "user_id,money_stolen,label\n";
  for (const auto& [id, v] : l.raw) csv += id + "," + detail::format_double(v) + "," + detail::format_double(l.scaled.at(id)) + "\n";
  write_text(r.file("labels.csv"), csv);
  print_done(r);
}

std::map<std::string, double> read_label_map(const nlohmann::json& j, const std::string& key, const std::string& path) {
  require(j.contains(key) && j.at(key).is_object(), ErrorCategory::parse, path + ": no '" + key + "' object");
  return j.at(key).get<std::map<std::string, double>>();
}

void cmd_train_scorer(const Options& o) {
  const Dataset data = need_dataset(o);
  const SurrogateDetector d = need_detector(o);
  const std::string labels_path = need(o.labels, "--labels", "labels", "label as labels.json");
  const nlohmann::json lj = read_json(labels_path);
  const Run r = start_run(o, "train-scorer");
  const RegressorKind kind = single_regressor(r, "train-scorer");
  const auto scaled = read_label_map(lj, "scaled", labels_path);
  const KnowledgeSplits split = split_for_attack(data, r.config, r.seed);
  const FeatureEncoder& enc = d.encoder();

  auto [train, held] = split_examples(make_examples(build_profiles(enc, split.attacker), scaled),
                                      r.config.scorer_held_out_fraction, derive_seed(r.seed, 8));
  std::vector<double> train_labels;
  for (const auto& e : train) train_labels.push_back(e.label);
  const auto seed = derive_seed(r.seed, 10, static_cast<int>(kind));
  Regressor reg = train_regressor(kind, train, r.config.regressor, seed);
  save_regressor(reg, r.file("scorer.json"));
  write_json(r.file("scorer_report.json"), {{"regressor", to_string(kind)},
                                            {"training_mae", reg.training_mae},
                                            {"heldout_mae", evaluate_regressor(reg, held)},
                                            {"mean_baseline_mae", mean_baseline_mae(detail::stable_mean(train_labels), held)},
                                            {"train_users", train.size()},
                                            {"held_out_users", held.size()}});

  std::vector<double> durations;
  for (double days : r.config.monitoring_days) durations.push_back(days * 86400.0);
  const auto curve = monitoring_curve(enc, split.attacker, scaled, durations, kind, r.config.regressor,
                                      r.config.scorer_held_out_fraction, seed);
  std::string csv = "duration_days,users,dropped_users,heldout_mae\n";
  for (std::size_t k = 0; k < curve.size(); ++k)
    csv += detail::format_double(r.config.monitoring_days[k]) + "," + std::to_string(curve[k].users) + "," +
           std::to_string(curve[k].dropped_users) + "," + detail::format_double(curve[k].mae) + "\n";
  write_text(r.file("monitoring.csv"), csv);
  print_done(r);
}

void cmd_rank(const Options& o) {
  const Dataset data = need_dataset(o);
  const SurrogateDetector d = need_detector(o);
  const Regressor reg = load_regressor(need(o.scorer, "--scorer", "trained scorer", "train-scorer as scorer.json"));
  const Run r = start_run(o, "rank");
  const KnowledgeSplits split = split_for_attack(data, r.config, r.seed);
  std::map<std::string, std::vector<double>> profiles;
  for (const auto& u : split.defender.users)
    if (u.size() > d.window()) profiles[u.user_id] = build_profile(d.encoder(), u).flatten();
  const auto ranking = rank_accounts(reg, profiles);
  require(r.config.top_k <= ranking.size(), ErrorCategory::invalid_argument,
          "top_k = " + std::to_string(r.config.top_k) + " exceeds the " + std::to_string(ranking.size()) +
              " rankable users");
  write_text(r.file("scores.csv"), scores_csv(ranking));
  std::vector<std::string> top;
  for (std::size_t k = 0; k < r.config.top_k; ++k) top.push_back(ranking[k].user_id);
  write_json(r.file("selected.json"), {{"top_k", r.config.top_k}, {"users", top}});
  print_done(r);
}

void cmd_attack(const Options& o) {
  const Dataset data = need_dataset(o);
  const SurrogateDetector d = need_detector(o);
  std::optional<std::vector<std::string>> chosen;
  if (!o.selection.empty()) chosen = read_json(o.selection).at("users").get<std::vector<std::string>>();
  const Run r = start_run(o, "attack");
  const Strategy s = single_strategy(r, "attack");
  const auto f = forecaster_for(o, r, s);
  const KnowledgeSplits split = split_for_attack(data, r.config, r.seed);
  const std::size_t n = d.window();

  std::vector<const UserHistory*> users;
  std::map<std::string, const UserHistory*> by_id;
  for (const auto& u : split.defender.users) by_id[u.user_id] = &u;
  if (chosen) {
    for (const auto& id : *chosen) {
      auto it = by_id.find(id);
      require(it != by_id.end(), ErrorCategory::invalid_argument, "selected user " + id + " is not a defender user");
      users.push_back(it->second);
    }
  } else {
    for (const auto& u : split.defender.users)
      if (u.size() > n) users.push_back(&u);
  }
  require(!users.empty(), ErrorCategory::invalid_argument, "no users to attack");

  log_line(o, "training the LOF target");
  const LofDetector target = train_target(r.config, split, r.seed);
  const Attacker attacker{&d, f ? &*f : nullptr, r.config.attack, derive_seed(r.seed, 9)};
  std::vector<UserAttack> attacks(users.size());
  const double seconds = timed([&] {
    parallel_for(users.size(), r.config.threads, [&](std::size_t k) {
      attacks[k] = inject_and_test(attacker, target, *users[k], s, r.config.log_candidates);
    });
  });
  std::vector<std::vector<InjectionRecord>> recs;
  nlohmann::json per_user = nlohmann::json::object();
  std::vector<std::string> log;
  for (std::size_t k = 0; k < users.size(); ++k) {
    recs.push_back(attacks[k].records);
    per_user[users[k]->user_id] = to_json(attacks[k].metrics);
    log.insert(log.end(), attacks[k].candidate_log.begin(), attacks[k].candidate_log.end());
  }
  write_json(r.file("attack.json"), {{"strategy", to_string(s)},
                                     {"target", {{"kind", "lof"}, {"threshold", target.threshold()}}},
                                     {"metrics", to_json(compute_aggregate_metrics(recs, n))},
                                     {"users", per_user},
                                     {"seconds_per_user", seconds / static_cast<double>(users.size())}});
  if (r.config.log_candidates) write_text(r.file("candidates.jsonl"), join_candidates(log));
  print_done(r);
}

void cmd_experiment(const Options& o) {
  const Run r = start_run(o, "experiment");
  const auto result = run_experiment(r.config, [&](const std::string& s) { log_line(o, s); });
  write_json(r.file("report.json"), result.report);
  write_json(r.file("timings.json"), result.timings);
  write_text(r.file("table1.csv"), table1_csv(result.report));
  write_text(r.file("table2.csv"), table2_csv(result.report));
  const auto rows = timing_rows(result.timings);
  write_text(r.file("timing.csv"), timing_csv(rows));
  if (r.config.log_candidates) write_text(r.file("candidates.jsonl"), join_candidates(result.candidate_log));
  print_done(r);
}

void cmd_timing_report(const Options& o) {
  std::string path = need(o.timings, "--timings", "experiment timings", "experiment as timings.json");
  if (fs::is_directory(path)) path = (fs::path(path) / "timings.json").string();
  const nlohmann::json timings = read_json(path);
  const Run r = start_run(o, "timing-report");
  const auto rows = timing_rows(timings);
  const std::string csv = timing_csv(rows);
  write_text(r.file("timing.csv"), csv);
  std::cout << csv;
  print_done(r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fraudability: rank accounts by how easily fraud slips past a detector"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file; flags override it");
    sub->add_option("--seed", o.seed, "Run seed");
    sub->add_option("--out", o.out, "Directory that receives the run directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads");
    sub->add_option("--strategy", o.strategy,
                    "pure-random | predicted-amount | adversarial-late-detection | adversarial-max-profit");
    sub->add_option("--regressor", o.regressor, "neural-net | random-forest | gradient-boosting | ridge");
    sub->add_option("--knowledge-fraction", o.knowledge_fraction, "Share of users known to the attacker");
    sub->add_option("--top-k", o.top_k, "Users selected by score");
    sub->add_option("--n", o.n, "Detector window length");
    sub->add_flag("--quiet", o.quiet, "No progress on stderr");
  };

  struct Command {
    const char* name;
    const char* help;
    void (*run)(const Options&);
  };
  const Command commands[] = {
      {"synth", "Generate a synthetic transaction dataset", cmd_synth},
      {"train-detector", "Train and calibrate the surrogate autoencoder", cmd_train_detector},
      {"train-forecaster", "Train the amount forecaster", cmd_train_forecaster},
      {"label", "Inject-and-test the attacker users against the surrogate", cmd_label},
      {"train-scorer", "Train a fraudability regressor on labeled profiles", cmd_train_scorer},
      {"rank", "Score and rank the defender users", cmd_rank},
      {"attack", "Attack defender users and test against the LOF target", cmd_attack},
      {"experiment", "Full pipeline over every configured seed", cmd_experiment},
      {"timing-report", "Seconds per user of labeling and scoring", cmd_timing_report},
  };
  std::map<CLI::App*, const Command*> by_app;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    by_app[sub] = &c;
  }
  for (const char* name : {"train-detector", "train-forecaster", "label", "train-scorer", "rank", "attack"})
    app.get_subcommand(name)->add_option("--data", o.data, "Dataset from synth (dataset.json)");
  for (const char* name : {"train-forecaster", "label", "train-scorer", "rank", "attack"})
    app.get_subcommand(name)->add_option("--detector", o.detector, "Detector from train-detector (detector.json)");
  for (const char* name : {"label", "attack"})
    app.get_subcommand(name)->add_option("--forecaster", o.forecaster, "Forecaster from train-forecaster");
  app.get_subcommand("train-scorer")->add_option("--labels", o.labels, "Labels from label (labels.json)");
  app.get_subcommand("rank")->add_option("--scorer", o.scorer, "Scorer from train-scorer (scorer.json)");
  app.get_subcommand("attack")->add_option("--selection", o.selection, "Users to attack (rank: selected.json)");
  app.get_subcommand("timing-report")->add_option("--timings", o.timings, "timings.json or an experiment run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[invalid-argument]: " << e.what() << "\n";
    return 2;
  }

  try {
    for (auto* sub : app.get_subcommands()) by_app.at(sub)->run(o);
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.category()) << "]: " << e.what() << "\n";
    return 3 + static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
