#pragma once

// Local outlier factor over flattened windows, used as the defender's
// (attacked) detector.
//
// Neighborhoods hold exactly k points, ties broken by stored index. Stored
// points exclude themselves from their own neighborhood; query points search
// all stored points.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fraudability/common.hpp"
#include "fraudability/detector.hpp"
#include "fraudability/features.hpp"
#include "fraudability/io.hpp"

namespace fraudability {

/// Guard added to the mean reachability distance so duplicate points have a
/// finite density.
inline constexpr double kLofDensityGuard = 1e-10;

class LofModel {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  LofModel() = default;

  /// `points` is row-major, `dim` values per point.
  LofModel(std::span<const double> points, std::size_t dim, std::size_t k = 20) : k_(k) {
    require(dim > 0 && points.size() % dim == 0, ErrorCategory::shape, "lof: points not a multiple of dim");
    const std::size_t m = points.size() / dim;
    require(k >= 1 && k < m, ErrorCategory::invalid_argument,
            "lof: k = " + std::to_string(k) + " must be < number of points " + std::to_string(m));
    points_ = Eigen::Map<const Matrix>(points.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
    kdist_.resize(m);
    neighbors_.resize(m);
    std::vector<double> d;
    for (std::size_t i = 0; i < m; ++i) {
      distances(points_.row(static_cast<Eigen::Index>(i)), d);
      neighbors_[i] = nearest(d, static_cast<std::ptrdiff_t>(i));
      kdist_[i] = d[neighbors_[i].back()];
    }
    lrd_.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      double reach = 0.0;
      for (std::size_t o : neighbors_[i]) reach += std::max(kdist_[o], distance(i, o));
      lrd_[i] = 1.0 / (reach / static_cast<double>(k_) + kLofDensityGuard);
    }
  }

  /// LOF of a query point against the stored points.
  double score(std::span<const double> query) const {
    require(query.size() == dim(), ErrorCategory::shape,
            "lof: query width " + std::to_string(query.size()) + " != " + std::to_string(dim()));
    std::vector<double> d;
    // Owned copy: keeps the distance kernels on the same alignment path for every query.
    const Eigen::RowVectorXd q = Eigen::Map<const Eigen::RowVectorXd>(query.data(), static_cast<Eigen::Index>(query.size()));
    distances(q, d);
    auto nb = nearest(d, -1);
    double reach = 0.0, neighbor_lrd = 0.0;
    for (std::size_t o : nb) {
      reach += std::max(kdist_[o], d[o]);
      neighbor_lrd += lrd_[o];
    }
    const double lrd = 1.0 / (reach / static_cast<double>(k_) + kLofDensityGuard);
    return neighbor_lrd / static_cast<double>(k_) / lrd;
  }

  /// LOF of stored point `i` (its neighborhood excludes itself).
  double training_score(std::size_t i) const {
    double neighbor_lrd = 0.0;
    for (std::size_t o : neighbors_.at(i)) neighbor_lrd += lrd_[o];
    return neighbor_lrd / static_cast<double>(k_) / lrd_[i];
  }

  std::size_t k() const { return k_; }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  const Matrix& points() const { return points_; }

 private:
  template <typename Row>
  void distances(const Row& q, std::vector<double>& out) const {
    Eigen::VectorXd d = (points_.rowwise() - q).rowwise().norm();
    out.assign(d.data(), d.data() + d.size());
  }

  double distance(std::size_t a, std::size_t b) const {
    return (points_.row(static_cast<Eigen::Index>(a)) - points_.row(static_cast<Eigen::Index>(b))).norm();
  }

  std::vector<std::size_t> nearest(const std::vector<double>& d, std::ptrdiff_t exclude) const {
    std::vector<std::size_t> idx;
    idx.reserve(d.size());
    for (std::size_t j = 0; j < d.size(); ++j)
      if (static_cast<std::ptrdiff_t>(j) != exclude) idx.push_back(j);
    auto closer = [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_), idx.end(), closer);
    idx.resize(k_);
    return idx;
  }

  std::size_t k_ = 20;
  Matrix points_;
  std::vector<double> kdist_;
  std::vector<double> lrd_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

inline LofModel train_lof(const WindowSet& windows, std::size_t k = 20) {
  return LofModel(windows.values, windows.n * windows.width, k);
}

inline double lof_score(const LofModel& m, std::span<const double> window) { return m.score(window); }

inline Verdict lof_classify(const LofModel& m, std::span<const double> window, double threshold) {
  return lof_score(m, window) > threshold ? Verdict::fraud : Verdict::benign;
}

struct LofConfig {
  std::size_t k = 20;
  std::size_t max_reference = 3000;
  std::size_t max_calibration = 1000;
  double quantile = 0.99;
};

inline nlohmann::json to_json(const LofConfig& c) {
  return {{"k", c.k}, {"max_reference", c.max_reference}, {"max_calibration", c.max_calibration}, {"quantile", c.quantile}};
}

inline void from_json(const nlohmann::json& j, LofConfig& c) {
  c.k = j.value("k", c.k);
  c.max_reference = j.value("max_reference", c.max_reference);
  c.max_calibration = j.value("max_calibration", c.max_calibration);
  c.quantile = j.value("quantile", c.quantile);
}

/// LOF model wrapped as a window detector with its own encoder and threshold.
class LofDetector : public WindowDetector {
 public:
  LofDetector() = default;
  LofDetector(FeatureEncoder encoder, std::size_t n, LofModel model, double threshold)
      : encoder_(std::move(encoder)), n_(n), model_(std::move(model)), threshold_(threshold) {
    require(model_.dim() == n_ * encoder_.width(), ErrorCategory::shape, "lof detector: model width mismatch");
  }

  const FeatureEncoder& encoder() const override { return encoder_; }
  std::size_t window() const override { return n_; }
  bool calibrated() const override { return threshold_ > 0.0; }
  double threshold() const override {
    require(calibrated(), ErrorCategory::state, "lof threshold not calibrated");
    return threshold_;
  }
  std::vector<double> window_scores(const EncodedHistory& h, std::span<const std::size_t> starts) const override {
    require(h.width == encoder_.width(), ErrorCategory::shape, "lof window_scores: encoded width mismatch");
    std::vector<double> out;
    out.reserve(starts.size());
    for (std::size_t s : starts) {
      require(s + n_ <= h.rows, ErrorCategory::invalid_argument, "lof window_scores: window out of range");
      out.push_back(model_.score({h.data.data() + s * h.width, n_ * h.width}));
    }
    return out;
  }
  const LofModel& model() const { return model_; }

 private:
  FeatureEncoder encoder_;
  std::size_t n_ = 0;
  LofModel model_;
  double threshold_ = 0.0;
};

/// Fits LOF on a seeded sample of the dataset's windows and calibrates the
/// threshold on a disjoint sample.
inline LofDetector train_lof_detector(const Dataset& dataset, const FeatureEncoder& encoder, std::size_t n,
                                      const LofConfig& config, std::uint64_t seed) {
  WindowSet all = extract_windows(encoder, dataset, n);
  std::vector<std::size_t> order(all.count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x10f));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t cal = std::min(config.max_calibration, all.count / 4);
  const std::size_t ref = std::min(config.max_reference, all.count - cal);
  require(cal >= kMinCalibrationWindows, ErrorCategory::invalid_argument,
          "lof: too few windows to calibrate (" + std::to_string(all.count) + ")");
  const std::size_t dim = n * encoder.width();
  std::vector<double> ref_points;
  ref_points.reserve(ref * dim);
  for (std::size_t r = 0; r < ref; ++r) {
    auto w = all.window(order[r]);
    ref_points.insert(ref_points.end(), w.begin(), w.end());
  }
  LofModel model(ref_points, dim, config.k);
  std::vector<double> scores;
  for (std::size_t r = ref; r < ref + cal; ++r) scores.push_back(model.score(all.window(order[r])));
  const double threshold = nearest_rank_quantile(scores, config.quantile);
  return LofDetector(encoder, n, std::move(model), threshold);
}

}  // namespace fraudability
