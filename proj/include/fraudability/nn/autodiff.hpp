#pragma once

// Tape-based reverse-mode automatic differentiation over 2-D tensors.
//
// Nodes are appended in evaluation order, so reverse insertion order is a
// reverse topological order; backward() visits every node once.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fraudability/nn/tensor.hpp"

namespace fraudability::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { std::fill(grad.values.begin(), grad.values.end(), 0.0); }
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  /// A non-training tape treats parameters as constants: backward then only
  /// produces input gradients and never writes to shared Parameter storage.
  explicit Tape(bool track_parameters = true) : track_parameters_(track_parameters) {}

  Var constant(Tensor value) { return push(std::move(value), false); }

  /// Differentiable leaf; its gradient is readable after backward().
  Var input(Tensor value) {
    require(value.finite(), ErrorCategory::numeric, "tape input contains NaN/Inf");
    return push(std::move(value), true);
  }

  /// Parameters are referenced, not copied. On a tracking tape backward()
  /// accumulates into `p.grad`, so such a tape must not be shared across threads.
  Var parameter(const Parameter& p) {
    Node n;
    n.ref = &p.value;
    n.requires_grad = track_parameters_;
    n.param = track_parameters_ ? const_cast<Parameter*>(&p) : nullptr;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }

  /// Gradient of the last backward() loss w.r.t. `v` (zeros if unreached).
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.values.empty()) return Tensor(value(v).shape);
    return n.grad;
  }

  double scalar(Var v) const {
    const Tensor& t = value(v);
    require(t.size() == 1, ErrorCategory::shape, "scalar(): tensor is " + shape_string(t));
    return t.values[0];
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    require(!nodes_.empty() && loss.id < nodes_.size(), ErrorCategory::state, "backward before forward");
    require(value(loss).size() == 1, ErrorCategory::shape, "backward: loss must be scalar");
    require(std::isfinite(value(loss).values[0]), ErrorCategory::numeric, "backward: loss is not finite");
    for (auto& n : nodes_) n.grad.values.clear();
    grad_ref(loss.id).values[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.values.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto& pg = n.param->grad.values;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.values[k];
      }
    }
  }

  // ---- internal API used by operations ---------------------------------
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var op(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return op(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  Var op(Tensor value, std::span<const Var> parents, BackwardFn fn) {
    bool rg = false;
    for (Var p : parents) rg = rg || nodes_[p.id].requires_grad;
    Var v = push(std::move(value), rg);
    if (rg) nodes_[v.id].backward = std::move(fn);
    return v;
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.values.empty()) n.grad = Tensor(value({id}).shape);
    return n.grad;
  }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  bool track_parameters_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations

inline Var matmul(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  require(A.cols() == B.rows(), ErrorCategory::shape,
          "matmul: " + shape_string(A) + " x " + shape_string(B));
  Tensor C = Tensor::matrix(A.rows(), B.cols());
  C.mat().noalias() = A.mat() * B.mat();
  return t.op(std::move(C), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    if (tp.requires_grad(a)) tp.grad_ref(a.id).mat().noalias() += G.mat() * tp.value(b).mat().transpose();
    if (tp.requires_grad(b)) tp.grad_ref(b.id).mat().noalias() += tp.value(a).mat().transpose() * G.mat();
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  require(A.same_shape(B), ErrorCategory::shape, "add: " + shape_string(A) + " vs " + shape_string(B));
  Tensor C = A;
  C.mat() += B.mat();
  return t.op(std::move(C), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    if (tp.requires_grad(a)) tp.grad_ref(a.id).mat() += G.mat();
    if (tp.requires_grad(b)) tp.grad_ref(b.id).mat() += G.mat();
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  require(A.same_shape(B), ErrorCategory::shape, "sub: " + shape_string(A) + " vs " + shape_string(B));
  Tensor C = A;
  C.mat() -= B.mat();
  return t.op(std::move(C), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    if (tp.requires_grad(a)) tp.grad_ref(a.id).mat() += G.mat();
    if (tp.requires_grad(b)) tp.grad_ref(b.id).mat() -= G.mat();
  });
}

/// a (m x n) + row vector b (1 x n), broadcast over rows.
inline Var add_bias(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  require(B.rows() == 1 && B.cols() == A.cols(), ErrorCategory::shape,
          "add_bias: " + shape_string(A) + " + " + shape_string(B));
  Tensor C = A;
  C.mat().rowwise() += B.mat().row(0);
  return t.op(std::move(C), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    if (tp.requires_grad(a)) tp.grad_ref(a.id).mat() += G.mat();
    if (tp.requires_grad(b)) tp.grad_ref(b.id).mat() += G.mat().colwise().sum();
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  const Tensor &A = t.value(a), &B = t.value(b);
  require(A.same_shape(B), ErrorCategory::shape, "mul: " + shape_string(A) + " vs " + shape_string(B));
  Tensor C = A;
  C.mat().array() *= B.mat().array();
  return t.op(std::move(C), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    if (tp.requires_grad(a)) tp.grad_ref(a.id).mat().array() += G.mat().array() * tp.value(b).mat().array();
    if (tp.requires_grad(b)) tp.grad_ref(b.id).mat().array() += G.mat().array() * tp.value(a).mat().array();
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor C = t.value(a);
  C.mat() *= s;
  return t.op(std::move(C), {a}, [a, s](Tape& tp, std::size_t self) {
    tp.grad_ref(a.id).mat() += s * tp.out_grad(self).mat();
  });
}

inline Var sigmoid(Tape& t, Var a) {
  Tensor C = t.value(a);
  C.mat().array() = 1.0 / (1.0 + (-C.mat().array()).exp());
  return t.op(std::move(C), {a}, [a](Tape& tp, std::size_t self) {
    const Tensor& Y = tp.value({self});
    tp.grad_ref(a.id).mat().array() += tp.out_grad(self).mat().array() * Y.mat().array() * (1.0 - Y.mat().array());
  });
}

inline Var tanh(Tape& t, Var a) {
  Tensor C = t.value(a);
  // Written through exp so Eigen can vectorize it; saturates exactly at +-1.
  C.mat().array() = 1.0 - 2.0 / ((2.0 * C.mat().array()).exp() + 1.0);
  return t.op(std::move(C), {a}, [a](Tape& tp, std::size_t self) {
    const Tensor& Y = tp.value({self});
    tp.grad_ref(a.id).mat().array() += tp.out_grad(self).mat().array() * (1.0 - Y.mat().array().square());
  });
}

inline Var relu(Tape& t, Var a) {
  Tensor C = t.value(a);
  for (double& x : C.values) x = x > 0.0 ? x : 0.0;
  return t.op(std::move(C), {a}, [a](Tape& tp, std::size_t self) {
    const Tensor& X = tp.value(a);
    const Tensor& G = tp.out_grad(self);
    Tensor& ga = tp.grad_ref(a.id);
    for (std::size_t k = 0; k < G.size(); ++k)
      if (X.values[k] > 0.0) ga.values[k] += G.values[k];
  });
}

/// Columns [start, start + count) of a.
inline Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t count) {
  const Tensor& A = t.value(a);
  require(start + count <= A.cols(), ErrorCategory::shape, "slice_cols out of range");
  Tensor C = Tensor::matrix(A.rows(), count);
  C.mat() = A.mat().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  return t.op(std::move(C), {a}, [a, start, count](Tape& tp, std::size_t self) {
    tp.grad_ref(a.id).mat().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
        tp.out_grad(self).mat();
  });
}

inline Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), ErrorCategory::shape, "concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    require(t.value(p).rows() == rows, ErrorCategory::shape, "concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Tensor C = Tensor::matrix(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    C.mat().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(P.cols())) = P.mat();
    off += P.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.op(std::move(C), parts, [ps](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    std::size_t o = 0;
    for (Var p : ps) {
      const std::size_t c = tp.value(p).cols();
      if (tp.requires_grad(p))
        tp.grad_ref(p.id).mat() += G.mat().middleCols(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c));
      o += c;
    }
  });
}

/// Rows of `table` selected by `indices` (embedding lookup).
inline Var gather_rows(Tape& t, Var table, std::vector<std::size_t> indices) {
  const Tensor& T = t.value(table);
  Tensor C = Tensor::matrix(indices.size(), T.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    require(indices[r] < T.rows(), ErrorCategory::shape, "gather_rows: index out of range");
    C.mat().row(static_cast<Eigen::Index>(r)) = T.mat().row(static_cast<Eigen::Index>(indices[r]));
  }
  return t.op(std::move(C), {table}, [table, idx = std::move(indices)](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    Tensor& gt = tp.grad_ref(table.id);
    for (std::size_t r = 0; r < idx.size(); ++r)
      gt.mat().row(static_cast<Eigen::Index>(idx[r])) += G.mat().row(static_cast<Eigen::Index>(r));
  });
}

inline Var sum(Tape& t, Var a) {
  const double s = t.value(a).mat().sum();
  return t.op(Tensor::scalar(s), {a}, [a](Tape& tp, std::size_t self) {
    tp.grad_ref(a.id).mat().array() += tp.out_grad(self).values[0];
  });
}

/// Sum of squared differences per row: (m x n), (m x n) -> (m x 1).
inline Var row_squared_error(Tape& t, Var pred, Var target) {
  const Tensor &P = t.value(pred), &Y = t.value(target);
  require(P.same_shape(Y), ErrorCategory::shape, "row_squared_error: shape mismatch");
  Tensor C = Tensor::matrix(P.rows(), 1);
  C.mat() = (P.mat() - Y.mat()).array().square().rowwise().sum().matrix();
  return t.op(std::move(C), {pred, target}, [pred, target](Tape& tp, std::size_t self) {
    const Tensor& G = tp.out_grad(self);
    Eigen::MatrixXd d = 2.0 * (tp.value(pred).mat() - tp.value(target).mat());
    d.array().colwise() *= G.mat().col(0).array();
    if (tp.requires_grad(pred)) tp.grad_ref(pred.id).mat() += d;
    if (tp.requires_grad(target)) tp.grad_ref(target.id).mat() -= d;
  });
}

enum class LossKind { mse, mae };

/// Mean squared or mean absolute error over all elements. The MAE
/// subgradient at a zero residual is 0.
inline Var loss(Tape& t, LossKind kind, Var pred, Var target) {
  const Tensor &P = t.value(pred), &Y = t.value(target);
  require(P.same_shape(Y), ErrorCategory::shape, "loss: " + shape_string(P) + " vs " + shape_string(Y));
  const double n = static_cast<double>(P.size());
  double v = 0.0;
  for (std::size_t k = 0; k < P.size(); ++k) {
    const double r = P.values[k] - Y.values[k];
    v += kind == LossKind::mse ? r * r : std::abs(r);
  }
  return t.op(Tensor::scalar(v / n), {pred, target}, [pred, target, kind, n](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self).values[0] / n;
    const Tensor &P = tp.value(pred), &Y = tp.value(target);
    Tensor d(P.shape);
    for (std::size_t k = 0; k < P.size(); ++k) {
      const double r = P.values[k] - Y.values[k];
      d.values[k] = kind == LossKind::mse ? 2.0 * r * g : (r > 0.0 ? g : (r < 0.0 ? -g : 0.0));
    }
    if (tp.requires_grad(pred)) tp.grad_ref(pred.id).mat() += d.mat();
    if (tp.requires_grad(target)) tp.grad_ref(target.id).mat() -= d.mat();
  });
}

}  // namespace fraudability::nn
