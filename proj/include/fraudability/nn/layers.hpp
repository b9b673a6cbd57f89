#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fraudability/nn/autodiff.hpp"

namespace fraudability::nn {

enum class Activation { linear, tanh, relu, sigmoid };

inline Var activate(Tape& t, Var x, Activation a) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::tanh: return tanh(t, x);
    case Activation::relu: return relu(t, x);
    case Activation::sigmoid: return sigmoid(t, x);
  }
  return x;
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "linear";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  fail(ErrorCategory::config, "unknown activation '" + s + "'");
}

/// Uniform in +-1/sqrt(fan_in).
inline Tensor uniform_init(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  Tensor t = Tensor::matrix(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : t.values) x = uniform(rng, -bound, bound);
  return t;
}

class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out, Activation act, Rng& rng, const std::string& name = "dense")
      : weight_(name + ".weight", uniform_init(rng, in, out, in)),
        bias_(name + ".bias", uniform_init(rng, 1, out, in)),
        activation_(act) {}

  Var forward(Tape& t, Var x) const {
    require(t.value(x).cols() == in_features(), ErrorCategory::shape,
            "dense: input width " + std::to_string(t.value(x).cols()) + " != " + std::to_string(in_features()));
    Var z = add_bias(t, matmul(t, x, t.parameter(weight_)), t.parameter(bias_));
    return activate(t, z, activation_);
  }

  std::size_t in_features() const { return weight_.value.rows(); }
  std::size_t out_features() const { return weight_.value.cols(); }
  Activation activation() const { return activation_; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight_, &bias_}); }

 private:
  Parameter weight_, bias_;
  Activation activation_ = Activation::linear;
};

/// LSTM with gate order (input, forget, cell candidate, output) packed along
/// the columns of the weight matrices. Zero initial state; full BPTT.
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::size_t in, std::size_t hidden, Rng& rng, const std::string& name = "lstm")
      : wx_(name + ".wx", uniform_init(rng, in, 4 * hidden, in)),
        wh_(name + ".wh", uniform_init(rng, hidden, 4 * hidden, hidden)),
        bias_(name + ".bias", uniform_init(rng, 1, 4 * hidden, hidden)),
        hidden_(hidden) {}

  /// Hidden states for every step of `xs` (each batch x in).
  std::vector<Var> forward(Tape& t, std::span<const Var> xs) const {
    require(!xs.empty(), ErrorCategory::shape, "lstm: empty sequence");
    const std::size_t h = hidden_;
    Var wx = t.parameter(wx_), wh = t.parameter(wh_), b = t.parameter(bias_);
    std::vector<Var> hs;
    hs.reserve(xs.size());
    Var hprev{}, cprev{};
    for (std::size_t step = 0; step < xs.size(); ++step) {
      require(t.value(xs[step]).cols() == in_features(), ErrorCategory::shape,
              "lstm: input width " + std::to_string(t.value(xs[step]).cols()) + " != " + std::to_string(in_features()));
      Var z = matmul(t, xs[step], wx);
      if (step > 0) z = add(t, z, matmul(t, hprev, wh));
      z = add_bias(t, z, b);
      Var i = sigmoid(t, slice_cols(t, z, 0, h));
      Var g = tanh(t, slice_cols(t, z, 2 * h, h));
      Var o = sigmoid(t, slice_cols(t, z, 3 * h, h));
      Var c = mul(t, i, g);
      if (step > 0) {
        Var f = sigmoid(t, slice_cols(t, z, h, h));
        c = add(t, mul(t, f, cprev), c);
      }
      Var hcur = mul(t, o, tanh(t, c));
      hs.push_back(hcur);
      hprev = hcur;
      cprev = c;
    }
    return hs;
  }

  std::size_t in_features() const { return wx_.value.rows(); }
  std::size_t hidden() const { return hidden_; }

  Parameter& wx() { return wx_; }
  Parameter& wh() { return wh_; }
  Parameter& bias() { return bias_; }
  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&wx_, &wh_, &bias_}); }

 private:
  Parameter wx_, wh_, bias_;
  std::size_t hidden_ = 0;
};

/// Stack of dense layers.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::span<const std::size_t> widths, Activation hidden, Activation output, Rng& rng) {
    require(widths.size() >= 2, ErrorCategory::config, "mlp needs at least input and output widths");
    for (std::size_t k = 0; k + 1 < widths.size(); ++k)
      layers_.emplace_back(widths[k], widths[k + 1], k + 2 == widths.size() ? output : hidden, rng,
                           "mlp." + std::to_string(k));
  }

  Var forward(Tape& t, Var x) const {
    for (const auto& l : layers_) x = l.forward(t, x);
    return x;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }
  std::size_t in_features() const { return layers_.front().in_features(); }

 private:
  std::vector<Dense> layers_;
};

}  // namespace fraudability::nn
