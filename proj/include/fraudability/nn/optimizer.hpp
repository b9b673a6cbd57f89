#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraudability/nn/autodiff.hpp"

namespace fraudability::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Parameter* const> params) {
    if (m_.empty()) {
      for (Parameter* p : params) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
      }
    }
    require(m_.size() == params.size(), ErrorCategory::shape, "adam: parameter list changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
      require(params[k]->grad.size() == params[k]->value.size() && m_[k].size() == params[k]->value.size(),
              ErrorCategory::shape, "adam: moment/gradient shape mismatch for " + params[k]->name);
      require(params[k]->grad.finite(), ErrorCategory::numeric, "adam: non-finite gradient in " + params[k]->name);
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k]->value.values;
      const auto& g = params[k]->grad.values;
      auto& m = m_[k].values;
      auto& v = v_[k].values;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
}

/// Mini-batch training loop. `batch_loss(tape, indices)` builds the mean loss
/// of the examples in `indices`; `after_step()` runs after each optimizer
/// update. Returns the per-epoch mean loss.
template <typename BatchLoss, typename AfterStep>
std::vector<double> train_loop(std::span<Parameter* const> params, std::size_t num_examples, const TrainConfig& config,
                               BatchLoss&& batch_loss, AfterStep&& after_step) {
  require(num_examples > 0, ErrorCategory::invalid_argument, "train: no training examples");
  require(config.batch_size > 0 && config.epochs > 0, ErrorCategory::config, "train: epochs and batch_size must be > 0");
  Adam adam(AdamConfig{config.learning_rate});
  Rng rng(derive_seed(config.seed, 0x7a1));
  std::vector<std::size_t> order(num_examples);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  curve.reserve(config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < num_examples; start += config.batch_size) {
      const std::size_t end = std::min(num_examples, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var l = batch_loss(tape, idx);
      tape.backward(l);
      adam.step(params);
      after_step();
      total += tape.scalar(l) * static_cast<double>(idx.size());
    }
    curve.push_back(total / static_cast<double>(num_examples));
  }
  return curve;
}

template <typename BatchLoss>
std::vector<double> train_loop(std::span<Parameter* const> params, std::size_t num_examples, const TrainConfig& config,
                               BatchLoss&& batch_loss) {
  return train_loop(params, num_examples, config, std::forward<BatchLoss>(batch_loss), [] {});
}

/// Rows of `rows` selected by `idx`, stacked into a matrix.
inline Tensor gather(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> idx) {
  require(!rows.empty(), ErrorCategory::invalid_argument, "gather: no rows");
  const std::size_t w = rows.front().size();
  Tensor t = Tensor::matrix(idx.size(), w);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(rows[idx[r]].size() == w, ErrorCategory::shape, "gather: ragged rows");
    std::copy(rows[idx[r]].begin(), rows[idx[r]].end(), t.values.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return t;
}

/// Fits a dense model to (x, y) rows.
template <typename Model>
std::vector<double> train_regression(Model& model, const std::vector<std::vector<double>>& x,
                                     const std::vector<std::vector<double>>& y, LossKind kind, const TrainConfig& config) {
  require(!x.empty() && x.size() == y.size(), ErrorCategory::invalid_argument, "train: empty or mismatched data");
  auto params = model.parameters();
  return train_loop(params, x.size(), config, [&](Tape& t, std::span<const std::size_t> idx) {
    Var in = t.constant(gather(x, idx));
    Var target = t.constant(gather(y, idx));
    return loss(t, kind, model.forward(t, in), target);
  });
}

}  // namespace fraudability::nn
