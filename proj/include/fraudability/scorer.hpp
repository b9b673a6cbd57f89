#pragma once

// Fraudability score predictors: flattened user profile -> score in [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"
#include "fraudability/features.hpp"
#include "fraudability/io.hpp"
#include "fraudability/nn/checkpoint.hpp"
#include "fraudability/nn/layers.hpp"
#include "fraudability/nn/optimizer.hpp"
#include "fraudability/synth.hpp"

namespace fraudability {

enum class RegressorKind { neural_net, random_forest, gradient_boosting, ridge };

inline constexpr RegressorKind kAllRegressors[] = {RegressorKind::neural_net, RegressorKind::random_forest,
                                                   RegressorKind::gradient_boosting, RegressorKind::ridge};

inline std::string to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::neural_net: return "neural-net";
    case RegressorKind::random_forest: return "random-forest";
    case RegressorKind::gradient_boosting: return "gradient-boosting";
    case RegressorKind::ridge: return "ridge";
  }
  return "?";
}

inline RegressorKind regressor_from_string(const std::string& s) {
  for (RegressorKind k : kAllRegressors)
    if (to_string(k) == s) return k;
  fail(ErrorCategory::config,
       "unknown regressor '" + s + "' (expected neural-net, random-forest, gradient-boosting, ridge)");
}

struct RegressorConfig {
  std::vector<std::size_t> nn_hidden{64, 32, 4};
  nn::TrainConfig nn_train{300, 16, 1e-3, 0};
  std::size_t forest_trees = 100;
  std::size_t forest_max_depth = 14;
  bool forest_bootstrap = false;
  std::size_t boosting_estimators = 200;
  std::size_t boosting_max_depth = 20;
  double boosting_learning_rate = 0.1;
  double ridge_lambda = 0.1;  // C = 1 / lambda = 10
  std::size_t min_samples_leaf = 1;
};

inline nlohmann::json to_json(const RegressorConfig& c) {
  return {{"nn_hidden", c.nn_hidden},
          {"nn_train", nn::to_json(c.nn_train)},
          {"forest_trees", c.forest_trees},
          {"forest_max_depth", c.forest_max_depth},
          {"forest_bootstrap", c.forest_bootstrap},
          {"boosting_estimators", c.boosting_estimators},
          {"boosting_max_depth", c.boosting_max_depth},
          {"boosting_learning_rate", c.boosting_learning_rate},
          {"ridge_lambda", c.ridge_lambda},
          {"min_samples_leaf", c.min_samples_leaf}};
}

inline void from_json(const nlohmann::json& j, RegressorConfig& c) {
  c.nn_hidden = j.value("nn_hidden", c.nn_hidden);
  if (j.contains("nn_train")) nn::from_json(j.at("nn_train"), c.nn_train);
  c.forest_trees = j.value("forest_trees", c.forest_trees);
  c.forest_max_depth = j.value("forest_max_depth", c.forest_max_depth);
  c.forest_bootstrap = j.value("forest_bootstrap", c.forest_bootstrap);
  c.boosting_estimators = j.value("boosting_estimators", c.boosting_estimators);
  c.boosting_max_depth = j.value("boosting_max_depth", c.boosting_max_depth);
  c.boosting_learning_rate = j.value("boosting_learning_rate", c.boosting_learning_rate);
  c.ridge_lambda = j.value("ridge_lambda", c.ridge_lambda);
  c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
  require(c.forest_trees >= 1 && c.boosting_estimators >= 1, ErrorCategory::config, "tree counts must be >= 1");
  require(c.ridge_lambda >= 0.0, ErrorCategory::config, "ridge_lambda must be >= 0");
  require(c.min_samples_leaf >= 1, ErrorCategory::config, "min_samples_leaf must be >= 1");
}

struct TrainingExample {
  std::string user_id;
  std::vector<double> features;
  double label = 0.0;
};

// ---------------------------------------------------------------------------
// Regression trees.

/// Flat binary tree. Leaves have feature == -1; internal nodes send x to
/// `left` when x[feature] <= threshold.
struct RegressionTree {
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    std::size_t left = 0, right = 0;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict(std::span<const double> x) const {
    std::size_t k = 0;
    while (nodes[k].feature >= 0) k = x[static_cast<std::size_t>(nodes[k].feature)] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }
};

namespace detail {

/// Mean that is exact for constant inputs.
inline double stable_mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double lo = *std::min_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += x - lo;
  return lo + acc / static_cast<double>(v.size());
}

struct TreeBuilder {
  const std::vector<std::vector<double>>& x;
  const std::vector<double>& y;
  std::size_t max_depth;
  std::size_t min_leaf;
  std::size_t features_per_split;  // 0 = all
  Rng* rng;
  RegressionTree tree;

  std::size_t build(std::vector<std::size_t> idx, std::size_t depth) {
    std::vector<double> ys;
    ys.reserve(idx.size());
    for (std::size_t i : idx) ys.push_back(y[i]);
    const std::size_t self = tree.nodes.size();
    tree.nodes.push_back({-1, 0.0, 0, 0, stable_mean(ys)});
    if (depth >= max_depth || idx.size() < 2 * min_leaf) return self;

    const std::size_t d = x[idx.front()].size();
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    if (features_per_split > 0 && features_per_split < d) {
      for (std::size_t k = 0; k < features_per_split; ++k)
        std::swap(feats[k], feats[k + uniform_index(*rng, d - k)]);
      feats.resize(features_per_split);
      std::sort(feats.begin(), feats.end());
    }

    double total = 0.0, total_sq = 0.0;
    for (double v : ys) {
      total += v;
      total_sq += v * v;
    }
    const double n = static_cast<double>(idx.size());
    const double parent_sse = total_sq - total * total / n;
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order(idx);
    for (std::size_t f : feats) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a][f] < x[b][f] || (x[a][f] == x[b][f] && a < b);
      });
      double left = 0.0, left_sq = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        left += y[order[k]];
        left_sq += y[order[k]] * y[order[k]];
        const double nl = static_cast<double>(k + 1), nr = n - nl;
        if (k + 1 < min_leaf || order.size() - k - 1 < min_leaf) continue;
        const double a = x[order[k]][f], b = x[order[k + 1]][f];
        if (!(a < b)) continue;
        const double right = total - left, right_sq = total_sq - left_sq;
        const double sse = (left_sq - left * left / nl) + (right_sq - right * right / nr);
        const double gain = parent_sse - sse;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = a + 0.5 * (b - a);
          if (!(best_threshold < b)) best_threshold = a;
        }
      }
    }
    if (best_feature < 0) return self;
    std::vector<std::size_t> li, ri;
    for (std::size_t i : idx) (x[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? li : ri).push_back(i);
    if (li.empty() || ri.empty()) return self;
    const std::size_t l = build(std::move(li), depth + 1);
    const std::size_t r = build(std::move(ri), depth + 1);
    tree.nodes[self].feature = best_feature;
    tree.nodes[self].threshold = best_threshold;
    tree.nodes[self].left = l;
    tree.nodes[self].right = r;
    return self;
  }
};

inline RegressionTree fit_tree(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                               std::vector<std::size_t> idx, std::size_t max_depth, std::size_t min_leaf,
                               std::size_t features_per_split, Rng& rng) {
  TreeBuilder b{x, y, max_depth, min_leaf, features_per_split, &rng, {}};
  b.build(std::move(idx), 0);
  return std::move(b.tree);
}

inline nlohmann::json tree_to_json(const RegressionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
  return nodes;
}

inline RegressionTree tree_from_json(const nlohmann::json& j) {
  RegressionTree t;
  for (const auto& n : j)
    t.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<std::size_t>(), n.at(3).get<std::size_t>(),
                       n.at(4).get<double>()});
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The regressor.

/// A trained score predictor. Raw outputs are clamped to [0,1] by predict().
class Regressor {
 public:
  RegressorKind kind = RegressorKind::random_forest;
  std::size_t width = 0;
  RegressorConfig config;
  double training_mae = 0.0;

  // Trees (forest: averaged; boosting: base + learning_rate * sum).
  std::vector<RegressionTree> trees;
  double base = 0.0;
  // Ridge: y = intercept + w.x
  std::vector<double> weights;
  double intercept = 0.0;
  // Neural net on standardized inputs, output offset by `base`.
  std::vector<double> feature_mean, feature_scale;
  nn::Mlp mlp;

  double predict_raw(std::span<const double> x) const {
    require(x.size() == width, ErrorCategory::shape,
            "regressor expects " + std::to_string(width) + " features, got " + std::to_string(x.size()));
    switch (kind) {
      case RegressorKind::random_forest: {
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(x);
        return s / static_cast<double>(trees.size());
      }
      case RegressorKind::gradient_boosting: {
        double s = base;
        for (const auto& t : trees) s += config.boosting_learning_rate * t.predict(x);
        return s;
      }
      case RegressorKind::ridge: {
        double s = intercept;
        for (std::size_t j = 0; j < width; ++j) s += weights[j] * x[j];
        return s;
      }
      case RegressorKind::neural_net: {
        nn::Tape t(false);
        nn::Tensor in = nn::Tensor::matrix(1, width);
        for (std::size_t j = 0; j < width; ++j) in.values[j] = (x[j] - feature_mean[j]) / feature_scale[j];
        return base + t.value(mlp.forward(t, t.constant(std::move(in)))).values[0];
      }
    }
    return 0.0;
  }

  double predict(std::span<const double> x) const { return std::clamp(predict_raw(x), 0.0, 1.0); }
};

namespace detail {

inline void check_examples(std::span<const TrainingExample> examples, std::size_t min_count) {
  require(examples.size() >= min_count, ErrorCategory::invalid_argument,
          "regressor needs >= " + std::to_string(min_count) + " examples, got " + std::to_string(examples.size()));
  const std::size_t w = examples.front().features.size();
  require(w > 0, ErrorCategory::shape, "regressor: empty feature vectors");
  for (const auto& e : examples) {
    require(e.features.size() == w, ErrorCategory::shape,
            "inconsistent feature widths: " + std::to_string(e.features.size()) + " vs " + std::to_string(w));
    require(all_finite(e.features) && std::isfinite(e.label), ErrorCategory::numeric, "non-finite training example");
  }
}

inline void fit_ridge(Regressor& r, const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  const auto m = static_cast<Eigen::Index>(x.size()), d = static_cast<Eigen::Index>(r.width);
  Eigen::MatrixXd X(m, d);
  Eigen::VectorXd Y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  // Unpenalized intercept: center, solve (XcT Xc + lambda I) w = XcT yc.
  const Eigen::RowVectorXd xm = X.colwise().mean();
  const double ym = stable_mean(y);
  const Eigen::MatrixXd Xc = X.rowwise() - xm;
  const Eigen::VectorXd Yc = Y.array() - ym;
  Eigen::MatrixXd A = Xc.transpose() * Xc;
  A.diagonal().array() += r.config.ridge_lambda;
  const Eigen::VectorXd w = A.ldlt().solve(Xc.transpose() * Yc);
  require(w.allFinite(), ErrorCategory::numeric, "ridge: singular system (set ridge_lambda > 0)");
  r.weights.assign(w.data(), w.data() + w.size());
  r.intercept = ym - xm.dot(w);
}

inline void fit_neural_net(Regressor& r, const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                           std::uint64_t seed) {
  const std::size_t d = r.width;
  r.feature_mean.assign(d, 0.0);
  r.feature_scale.assign(d, 1.0);
  std::vector<double> col(x.size());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) col[i] = x[i][j];
    const double mu = stable_mean(col);
    double ss = 0.0;
    for (double v : col) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / static_cast<double>(col.size()));
    r.feature_mean[j] = mu;
    r.feature_scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  r.base = stable_mean(y);
  std::vector<std::size_t> widths{d};
  widths.insert(widths.end(), r.config.nn_hidden.begin(), r.config.nn_hidden.end());
  widths.push_back(1);
  Rng rng(derive_seed(seed, 0x4e4e));
  r.mlp = nn::Mlp(widths, nn::Activation::relu, nn::Activation::linear, rng);
  // Start from the label mean: a zero output layer.
  auto& out = r.mlp.layers().back();
  out.weight().value.values.assign(out.weight().value.values.size(), 0.0);
  out.bias().value.values.assign(out.bias().value.values.size(), 0.0);
  std::vector<std::vector<double>> xs(x.size(), std::vector<double>(d)), ys(y.size(), std::vector<double>(1));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) xs[i][j] = (x[i][j] - r.feature_mean[j]) / r.feature_scale[j];
    ys[i][0] = y[i] - r.base;
  }
  nn::TrainConfig tc = r.config.nn_train;
  tc.seed = derive_seed(seed, 0x4e4f, r.config.nn_train.seed);
  nn::train_regression(r.mlp, xs, ys, nn::LossKind::mae, tc);
}

}  // namespace detail

/// Deterministic per seed. Forests draw sqrt(d) candidate features per split;
/// boosting fits squared-error residuals with all features.
inline Regressor train_regressor(RegressorKind kind, std::span<const TrainingExample> examples,
                                 const RegressorConfig& config, std::uint64_t seed, std::size_t min_examples = 10) {
  detail::check_examples(examples, min_examples);
  Regressor r;
  r.kind = kind;
  r.config = config;
  r.width = examples.front().features.size();
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& e : examples) {
    x.push_back(e.features);
    y.push_back(e.label);
  }
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), 0);

  switch (kind) {
    case RegressorKind::random_forest: {
      const auto per_split = static_cast<std::size_t>(std::max(1.0, std::floor(std::sqrt(static_cast<double>(r.width)))));
      for (std::size_t t = 0; t < config.forest_trees; ++t) {
        Rng rng(derive_seed(seed, 0xf0e, t));
        std::vector<std::size_t> idx = all;
        if (config.forest_bootstrap)
          for (auto& i : idx) i = uniform_index(rng, all.size());
        r.trees.push_back(detail::fit_tree(x, y, std::move(idx), config.forest_max_depth, config.min_samples_leaf,
                                           per_split, rng));
      }
      break;
    }
    case RegressorKind::gradient_boosting: {
      r.base = detail::stable_mean(y);
      std::vector<double> pred(y.size(), r.base), resid(y.size());
      Rng rng(derive_seed(seed, 0xb00));
      for (std::size_t t = 0; t < config.boosting_estimators; ++t) {
        for (std::size_t i = 0; i < y.size(); ++i) resid[i] = y[i] - pred[i];
        r.trees.push_back(detail::fit_tree(x, resid, all, config.boosting_max_depth, config.min_samples_leaf, 0, rng));
        for (std::size_t i = 0; i < y.size(); ++i) pred[i] += config.boosting_learning_rate * r.trees.back().predict(x[i]);
      }
      break;
    }
    case RegressorKind::ridge: detail::fit_ridge(r, x, y); break;
    case RegressorKind::neural_net: detail::fit_neural_net(r, x, y, seed); break;
  }
  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) err += std::abs(r.predict(x[i]) - y[i]);
  r.training_mae = err / static_cast<double>(x.size());
  return r;
}

inline double predict(const Regressor& r, std::span<const double> profile) { return r.predict(profile); }

/// Mean |prediction - label|.
inline double evaluate_regressor(const Regressor& r, std::span<const TrainingExample> examples) {
  require(!examples.empty(), ErrorCategory::invalid_argument, "evaluate_regressor: no examples");
  double err = 0.0;
  for (const auto& e : examples) err += std::abs(r.predict(e.features) - e.label);
  return err / static_cast<double>(examples.size());
}

/// MAE of predicting `mean_label` for every example.
inline double mean_baseline_mae(double mean_label, std::span<const TrainingExample> examples) {
  require(!examples.empty(), ErrorCategory::invalid_argument, "mean_baseline_mae: no examples");
  double err = 0.0;
  for (const auto& e : examples) err += std::abs(mean_label - e.label);
  return err / static_cast<double>(examples.size());
}

struct RankedUser {
  std::string user_id;
  double score = 0.0;
};

/// Descending scores, ties by ascending user id.
inline std::vector<RankedUser> rank_scores(std::vector<RankedUser> scored) {
  require(!scored.empty(), ErrorCategory::invalid_argument, "rank: no users");
  std::sort(scored.begin(), scored.end(), [](const RankedUser& a, const RankedUser& b) {
    return a.score > b.score || (a.score == b.score && a.user_id < b.user_id);
  });
  return scored;
}

inline std::vector<RankedUser> rank_accounts(const Regressor& r, const std::map<std::string, std::vector<double>>& profiles) {
  std::vector<RankedUser> out;
  for (const auto& [id, p] : profiles) out.push_back({id, r.predict(p)});
  return rank_scores(std::move(out));
}

// ---------------------------------------------------------------------------
// Persistence.

inline nlohmann::json to_json(Regressor& r) {
  nlohmann::json j{{"format", "fraudability-regressor"},
                   {"version", 1},
                   {"kind", to_string(r.kind)},
                   {"width", r.width},
                   {"config", to_json(r.config)},
                   {"training_mae", r.training_mae},
                   {"base", r.base},
                   {"weights", r.weights},
                   {"intercept", r.intercept},
                   {"feature_mean", r.feature_mean},
                   {"feature_scale", r.feature_scale}};
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : r.trees) trees.push_back(detail::tree_to_json(t));
  j["trees"] = std::move(trees);
  if (r.kind == RegressorKind::neural_net) {
    auto params = r.mlp.parameters();
    j["mlp"] = nn::save_parameters(params);
  }
  return j;
}

inline void save_regressor(Regressor& r, const std::string& path) { write_json(path, to_json(r)); }

inline Regressor load_regressor(const std::string& path) {
  const nlohmann::json j = read_json(path);
  try {
    require(j.at("format").get<std::string>() == "fraudability-regressor", ErrorCategory::parse,
            path + ": wrong format tag");
    Regressor r;
    r.kind = regressor_from_string(j.at("kind").get<std::string>());
    r.width = j.at("width").get<std::size_t>();
    from_json(j.at("config"), r.config);
    r.training_mae = j.at("training_mae").get<double>();
    r.base = j.at("base").get<double>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.intercept = j.at("intercept").get<double>();
    r.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    r.feature_scale = j.at("feature_scale").get<std::vector<double>>();
    for (const auto& t : j.at("trees")) r.trees.push_back(detail::tree_from_json(t));
    if (r.kind == RegressorKind::neural_net) {
      std::vector<std::size_t> widths{r.width};
      widths.insert(widths.end(), r.config.nn_hidden.begin(), r.config.nn_hidden.end());
      widths.push_back(1);
      Rng rng(0);
      r.mlp = nn::Mlp(widths, nn::Activation::relu, nn::Activation::linear, rng);
      auto params = r.mlp.parameters();
      nn::load_parameters(params, j.at("mlp"));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::parse, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Profiles and examples.

/// Flattened profile of every user with at least two transactions.
inline std::map<std::string, std::vector<double>> build_profiles(const FeatureEncoder& enc, const Dataset& ds) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& u : ds.users)
    if (u.size() >= 2) out[u.user_id] = build_profile(enc, u).flatten();
  return out;
}

inline std::vector<TrainingExample> make_examples(const std::map<std::string, std::vector<double>>& profiles,
                                                  const std::map<std::string, double>& labels) {
  std::vector<TrainingExample> out;
  for (const auto& [id, label] : labels) {
    auto it = profiles.find(id);
    if (it == profiles.end()) continue;
    require(label >= 0.0 && label <= 1.0, ErrorCategory::invalid_argument, "label outside [0,1] for " + id);
    out.push_back({id, it->second, label});
  }
  return out;
}

/// Seeded split of examples into (train, held-out); held-out gets
/// round(fraction * N) examples, at least one.
inline std::pair<std::vector<TrainingExample>, std::vector<TrainingExample>> split_examples(
    std::vector<TrainingExample> examples, double held_out_fraction, std::uint64_t seed) {
  require(examples.size() >= 2, ErrorCategory::invalid_argument, "split_examples: need >= 2 examples");
  Rng rng(derive_seed(seed, 0x5b1));
  std::shuffle(examples.begin(), examples.end(), rng);
  const auto held = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(examples.size()))), 1,
      examples.size() - 1);
  std::vector<TrainingExample> test(examples.end() - static_cast<std::ptrdiff_t>(held), examples.end());
  examples.resize(examples.size() - held);
  return {std::move(examples), std::move(test)};
}

struct MonitoringPoint {
  double duration_seconds = 0.0;
  std::size_t users = 0;
  std::size_t dropped_users = 0;
  double mae = 0.0;
};

/// Held-out MAE when profiles are built only from each user's first
/// `duration` seconds of history (labels unchanged). The same seeded
/// train/held-out user split is used for every duration.
inline std::vector<MonitoringPoint> monitoring_curve(const FeatureEncoder& enc, const Dataset& split,
                                                     const std::map<std::string, double>& labels,
                                                     std::span<const double> durations, RegressorKind kind,
                                                     const RegressorConfig& config, double held_out_fraction,
                                                     std::uint64_t seed) {
  require(!durations.empty(), ErrorCategory::invalid_argument, "monitoring_curve: no durations");
  std::vector<std::string> ids;
  for (const auto& [id, l] : labels) ids.push_back(id);
  Rng rng(derive_seed(seed, 0x3b1));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto held = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(ids.size()))), 1,
      ids.size() > 1 ? ids.size() - 1 : 1);
  std::map<std::string, bool> is_test;
  for (std::size_t k = 0; k < ids.size(); ++k) is_test[ids[k]] = k >= ids.size() - held;

  std::vector<MonitoringPoint> out;
  for (double dur : durations) {
    require(dur > 0.0, ErrorCategory::invalid_argument, "monitoring durations must be > 0");
    MonitoringPoint pt{dur, 0, 0, 0.0};
    std::vector<TrainingExample> train, test;
    for (const auto& u : split.users) {
      auto it = labels.find(u.user_id);
      if (it == labels.end() || u.transactions.empty()) continue;
      const double cutoff = static_cast<double>(u.transactions.front().timestamp) + dur;
      UserHistory cut{u.user_id, {}};
      for (const auto& t : u.transactions)
        if (static_cast<double>(t.timestamp) < cutoff) cut.transactions.push_back(t);
      if (cut.size() < 2) {
        ++pt.dropped_users;
        continue;
      }
      ++pt.users;
      (is_test[u.user_id] ? test : train).push_back({u.user_id, build_profile(enc, cut).flatten(), it->second});
    }
    require(train.size() >= 2 && !test.empty(), ErrorCategory::invalid_argument,
            "monitoring_curve: too few users left for duration " + std::to_string(dur));
    Regressor r = train_regressor(kind, train, config, seed, 2);
    pt.mae = evaluate_regressor(r, test);
    out.push_back(pt);
  }
  return out;
}

/// `user_id,predicted_score[,actual_label]` rows in ranking order.
inline std::string scores_csv(std::span<const RankedUser> ranking, const std::map<std::string, double>* actual = nullptr) {
  std::string out = actual ? "user_id,predicted_score,actual_label\n" : "user_id,predicted_score\n";
  for (const auto& r : ranking) {
    out += r.user_id + "," + detail::format_double(r.score);
    if (actual) {
      auto it = actual->find(r.user_id);
      out += ",";
      if (it != actual->end()) out += detail::format_double(it->second);
    }
    out += "\n";
  }
  return out;
}

}  // namespace fraudability
