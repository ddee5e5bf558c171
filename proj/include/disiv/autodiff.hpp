#pragma once

// Minimal define-by-run reverse-mode differentiation over rank-2 tensors.
//
// Every op evaluates eagerly when it is recorded on a Tape; backward() then
// walks the tape in reverse insertion order, which is a topological order of
// the (acyclic) node graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "disiv/errors.hpp"
#include "disiv/tensor.hpp"

namespace disiv {

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  AddBias,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  Tanh,
  Sigmoid,
  Identity,
  Exp,
  Log,
  Sqrt,
  Abs,
  Square,
  Clamp,
  Sum,
  Mean,
  RowSum,
  ConcatCols,
  GatherRows,
  StopGradient,
  Reparameterize,
  MeanAbsCosine,
  Aggregate,
};

enum class Activation { Relu, Tanh, Sigmoid, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + s + "'");
}

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

using BackwardFn = std::function<void(Tape&, std::size_t self)>;

struct CompNode {
  OpKind kind = OpKind::Leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;
  bool stop_gradient = false;
  bool requires_grad = false;
  bool has_grad = false;
  BackwardFn backward;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (a parameter or a tensor under test).
  Var leaf(Tensor value) { return add_node(OpKind::Leaf, {}, std::move(value), true, {}); }

  Var constant(Tensor value) {
    return add_node(OpKind::Constant, {}, std::move(value), false, {});
  }

  /// Records a node. `fn` receives the tape and the new node's id and must
  /// route that node's gradient into its inputs via accumulate().
  Var push(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn fn) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool req = false;
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractError("autodiff: operand from another tape");
      ids.push_back(v.id);
      req = req || nodes_[v.id].requires_grad;
    }
    if (!value.all_finite()) {
      throw NumericError("autodiff: non-finite value produced by op #" +
                         std::to_string(static_cast<int>(kind)));
    }
    return add_node(kind, std::move(ids), std::move(value), req, std::move(fn));
  }

  /// Identity forward, zero backward. When replay values are installed (see
  /// gradcheck) the k-th stop_gradient on the tape yields the k-th replay
  /// value instead of its input, freezing the stopped path.
  Var stop_gradient(Var x) {
    Tensor v = x.value();
    const std::size_t k = stop_count_++;
    if (replay_ != nullptr) {
      if (k >= replay_->size()) throw ContractError("autodiff: stop-gradient replay underflow");
      v = (*replay_)[k];
    }
    Var out = add_node(OpKind::StopGradient, {x.id}, std::move(v), false, {});
    nodes_[out.id].stop_gradient = true;
    return out;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const CompNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Returns the cached root value; values are computed eagerly as ops are
  /// recorded, so this only validates the result.
  const Tensor& forward(Var root) const {
    const Tensor& v = value(root);
    if (!v.all_finite()) throw NumericError("autodiff: non-finite forward value");
    return v;
  }

  /// Gradient of `v` after backward(); zeros when nothing reached it.
  Tensor grad(Var v) const {
    const CompNode& n = nodes_.at(v.id);
    if (n.has_grad) return n.grad;
    return Tensor(n.value.rows(), n.value.cols());
  }

  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient buffer of node `id` (no-op for nodes that
  /// cannot reach a leaf).
  void accumulate(std::size_t id, const Tensor& g) {
    CompNode& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      kernels::require_same_shape(n.value, g, "autodiff: gradient");
      n.grad = g;
      n.has_grad = true;
    } else {
      kernels::axpy(1.0, g, n.grad);
    }
  }

  void backward(Var root) {
    const CompNode& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
      throw ContractError("autodiff: backward root must be scalar, got " +
                          r.value.shape_string());
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    accumulate(root.id, Tensor::scalar(1.0));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      CompNode& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Values seen by each stop_gradient call so far, in order.
  std::vector<Tensor> stopped_values() const {
    std::vector<Tensor> out;
    for (const auto& n : nodes_) {
      if (n.kind == OpKind::StopGradient) out.push_back(n.value);
    }
    return out;
  }
  std::size_t stop_count() const noexcept { return stop_count_; }
  void set_stop_replay(const std::vector<Tensor>* replay) { replay_ = replay; }

 private:
  Var add_node(OpKind kind, std::vector<std::size_t> inputs, Tensor value, bool req,
               BackwardFn fn) {
    CompNode n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = req;
    if (req) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<CompNode> nodes_;
  std::size_t stop_count_ = 0;
  const std::vector<Tensor>* replay_ = nullptr;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

inline Var stop_gradient(Var x) { return x.tape->stop_gradient(x); }

// ---------------------------------------------------------------------------
// Ops

namespace detail {

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  auto in = a.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return out;
}

inline std::size_t in(const Tape& t, std::size_t self, std::size_t k) {
  return t.node(self).inputs[k];
}

/// Elementwise op whose local derivative depends on (input, output).
template <class F, class D>
Var unary(Var x, OpKind kind, F f, D dfdx) {
  Tensor v = map(x.value(), f);
  return x.tape->push(kind, {x}, std::move(v), [dfdx](Tape& t, std::size_t self) {
    const std::size_t a = in(t, self, 0);
    const Tensor& xin = t.value_of(a);
    const Tensor& y = t.value_of(self);
    const Tensor& gy = t.grad_of(self);
    Tensor g(xin.rows(), xin.cols());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy[i] * dfdx(xin[i], y[i]);
    t.accumulate(a, g);
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tensor v = kernels::matmul(a.value(), b.value());
  return a.tape->push(OpKind::MatMul, {a, b}, std::move(v), [](Tape& t, std::size_t self) {
    const std::size_t ia = detail::in(t, self, 0);
    const std::size_t ib = detail::in(t, self, 1);
    const Tensor& g = t.grad_of(self);
    if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul_nt(g, t.value_of(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul_tn(t.value_of(ia), g));
  });
}

inline Var add(Var a, Var b) {
  kernels::require_same_shape(a.value(), b.value(), "add");
  Tensor v = a.value();
  kernels::axpy(1.0, b.value(), v);
  return a.tape->push(OpKind::Add, {a, b}, std::move(v), [](Tape& t, std::size_t self) {
    t.accumulate(detail::in(t, self, 0), t.grad_of(self));
    t.accumulate(detail::in(t, self, 1), t.grad_of(self));
  });
}

inline Var sub(Var a, Var b) {
  kernels::require_same_shape(a.value(), b.value(), "sub");
  Tensor v = a.value();
  kernels::axpy(-1.0, b.value(), v);
  return a.tape->push(OpKind::Sub, {a, b}, std::move(v), [](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    t.accumulate(detail::in(t, self, 0), g);
    Tensor neg = detail::map(g, [](double x) { return -x; });
    t.accumulate(detail::in(t, self, 1), neg);
  });
}

/// a (N x C) plus a 1 x C row broadcast to every row.
inline Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError("add_bias: " + av.shape_string() + " + " + bv.shape_string());
  }
  Tensor v = av;
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) v(r, c) += bv(0, c);
  return a.tape->push(OpKind::AddBias, {a, bias}, std::move(v), [](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    t.accumulate(detail::in(t, self, 0), g);
    const std::size_t ib = detail::in(t, self, 1);
    if (t.requires_grad(ib)) {
      Tensor gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      t.accumulate(ib, gb);
    }
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  kernels::require_same_shape(a.value(), b.value(), "mul");
  Tensor v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.value()[i];
  return a.tape->push(OpKind::Mul, {a, b}, std::move(v), [](Tape& t, std::size_t self) {
    const std::size_t ia = detail::in(t, self, 0);
    const std::size_t ib = detail::in(t, self, 1);
    const Tensor& g = t.grad_of(self);
    if (t.requires_grad(ia)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value_of(ib)[i];
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value_of(ia)[i];
      t.accumulate(ib, gb);
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor v = detail::map(a.value(), [c](double x) { return c * x; });
  return a.tape->push(OpKind::Scale, {a}, std::move(v), [c](Tape& t, std::size_t self) {
    t.accumulate(detail::in(t, self, 0),
                 detail::map(t.grad_of(self), [c](double g) { return c * g; }));
  });
}

inline Var add_scalar(Var a, double c) {
  Tensor v = detail::map(a.value(), [c](double x) { return x + c; });
  return a.tape->push(OpKind::AddScalar, {a}, std::move(v), [](Tape& t, std::size_t self) {
    t.accumulate(detail::in(t, self, 0), t.grad_of(self));
  });
}

/// 1 - a
inline Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

inline Var relu(Var x) {
  return detail::unary(
      x, OpKind::Relu, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, OpKind::Tanh, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x, OpKind::Sigmoid, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Var identity(Var x) {
  return detail::unary(
      x, OpKind::Identity, [](double v) { return v; }, [](double, double) { return 1.0; });
}

inline Var exp(Var x) {
  return detail::unary(
      x, OpKind::Exp, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

inline Var log(Var x) {
  return detail::unary(
      x, OpKind::Log, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(Var x) {
  return detail::unary(
      x, OpKind::Sqrt, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

inline Var abs(Var x) {
  return detail::unary(
      x, OpKind::Abs, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Var x) {
  return detail::unary(
      x, OpKind::Square, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

/// Clamps into [lo, hi]; zero gradient where the bound is active.
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, OpKind::Clamp, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Identity: return x;
  }
  return x;
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->push(OpKind::Sum, {a}, Tensor::scalar(s), [](Tape& t, std::size_t self) {
    const std::size_t ia = detail::in(t, self, 0);
    const Tensor& x = t.value_of(ia);
    t.accumulate(ia, Tensor(x.rows(), x.cols(), t.grad_of(self).item()));
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->push(OpKind::Mean, {a}, Tensor::scalar(s / n), [n](Tape& t, std::size_t self) {
    const std::size_t ia = detail::in(t, self, 0);
    const Tensor& x = t.value_of(ia);
    t.accumulate(ia, Tensor(x.rows(), x.cols(), t.grad_of(self).item() / n));
  });
}

/// N x C -> N x 1
inline Var row_sum(Var a) {
  const Tensor& x = a.value();
  Tensor v(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) v(r, 0) += x(r, c);
  return a.tape->push(OpKind::RowSum, {a}, std::move(v), [](Tape& t, std::size_t self) {
    const std::size_t ia = detail::in(t, self, 0);
    const Tensor& x = t.value_of(ia);
    const Tensor& g = t.grad_of(self);
    Tensor gx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) = g(r, 0);
    t.accumulate(ia, gx);
  });
}

/// [a | b] along columns.
inline Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: " + av.shape_string() + " | " + bv.shape_string());
  }
  Tensor v(av.rows(), av.cols() + bv.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) v(r, c) = av(r, c);
    for (std::size_t c = 0; c < bv.cols(); ++c) v(r, av.cols() + c) = bv(r, c);
  }
  return a.tape->push(OpKind::ConcatCols, {a, b}, std::move(v), [](Tape& t, std::size_t self) {
    const std::size_t ia = detail::in(t, self, 0);
    const std::size_t ib = detail::in(t, self, 1);
    const Tensor& g = t.grad_of(self);
    const std::size_t ca = t.value_of(ia).cols();
    const std::size_t cb = t.value_of(ib).cols();
    Tensor ga(g.rows(), ca), gb(g.rows(), cb);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < ca; ++c) ga(r, c) = g(r, c);
      for (std::size_t c = 0; c < cb; ++c) gb(r, c) = g(r, ca + c);
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

/// Selects rows `idx` (duplicates allowed) in the given order.
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  const Tensor& x = a.value();
  Tensor v(idx.size(), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    for (std::size_t c = 0; c < x.cols(); ++c) v(r, c) = x(idx[r], c);
  }
  return a.tape->push(OpKind::GatherRows, {a}, std::move(v),
                      [idx = std::move(idx)](Tape& t, std::size_t self) {
                        const std::size_t ia = detail::in(t, self, 0);
                        const Tensor& x = t.value_of(ia);
                        const Tensor& g = t.grad_of(self);
                        Tensor gx(x.rows(), x.cols());
                        for (std::size_t r = 0; r < idx.size(); ++r)
                          for (std::size_t c = 0; c < x.cols(); ++c) gx(idx[r], c) += g(r, c);
                        t.accumulate(ia, gx);
                      });
}

/// mu + exp(logvar / 2) * noise, with `noise` supplied by the caller.
inline Var reparameterize(Var mu, Var logvar, const Tensor& noise) {
  kernels::require_same_shape(mu.value(), logvar.value(), "reparameterize");
  kernels::require_same_shape(mu.value(), noise, "reparameterize noise");
  Tensor v = mu.value();
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] += std::exp(0.5 * logvar.value()[i]) * noise[i];
  return mu.tape->push(OpKind::Reparameterize, {mu, logvar}, std::move(v),
                       [noise](Tape& t, std::size_t self) {
                         const std::size_t imu = detail::in(t, self, 0);
                         const std::size_t ilv = detail::in(t, self, 1);
                         const Tensor& g = t.grad_of(self);
                         t.accumulate(imu, g);
                         if (t.requires_grad(ilv)) {
                           const Tensor& lv = t.value_of(ilv);
                           Tensor glv(g.rows(), g.cols());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             glv[i] = g[i] * noise[i] * 0.5 * std::exp(0.5 * lv[i]);
                           t.accumulate(ilv, glv);
                         }
                       });
}

/// (1/N) sum_i |cos(a_i, b_i)| over rows. Rows where either norm is below
/// `eps` contribute zero value and zero gradient.
inline Var mean_abs_cosine(Var a, Var b, double eps = 1e-12) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  kernels::require_same_shape(av, bv, "mean_abs_cosine");
  if (av.rows() == 0) throw ContractError("mean_abs_cosine: no rows");
  const std::size_t n = av.rows();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      dot += av(r, c) * bv(r, c);
      na += av(r, c) * av(r, c);
      nb += bv(r, c) * bv(r, c);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < eps || nb < eps) continue;
    total += std::abs(dot / (na * nb));
  }
  return a.tape->push(
      OpKind::MeanAbsCosine, {a, b}, Tensor::scalar(total / static_cast<double>(n)),
      [eps](Tape& t, std::size_t self) {
        const std::size_t ia = detail::in(t, self, 0);
        const std::size_t ib = detail::in(t, self, 1);
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(ib);
        const double g = t.grad_of(self).item() / static_cast<double>(x.rows());
        Tensor gx(x.rows(), x.cols()), gy(y.rows(), y.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double dot = 0.0, nx = 0.0, ny = 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) {
            dot += x(r, c) * y(r, c);
            nx += x(r, c) * x(r, c);
            ny += y(r, c) * y(r, c);
          }
          nx = std::sqrt(nx);
          ny = std::sqrt(ny);
          if (nx < eps || ny < eps) continue;
          const double cosv = dot / (nx * ny);
          const double sgn = cosv > 0.0 ? 1.0 : (cosv < 0.0 ? -1.0 : 0.0);
          for (std::size_t c = 0; c < x.cols(); ++c) {
            gx(r, c) = g * sgn * (y(r, c) / (nx * ny) - cosv * x(r, c) / (nx * nx));
            gy(r, c) = g * sgn * (x(r, c) / (nx * ny) - cosv * y(r, c) / (ny * ny));
          }
        }
        t.accumulate(ia, gx);
        t.accumulate(ib, gy);
      });
}

// ---------------------------------------------------------------------------
// Named parameter storage

struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterList = std::vector<Parameter>;

/// Records every parameter as a differentiable leaf, in order.
inline std::vector<Var> bind_params(Tape& tape, const ParameterList& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(tape.leaf(p.value));
  return out;
}

/// Same as bind() but as constants: no gradient can reach them.
inline std::vector<Var> bind_constants(Tape& tape, const ParameterList& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(tape.constant(p.value));
  return out;
}

inline std::vector<Tensor> gradients(const Tape& tape, std::span<const Var> vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(tape.grad(v));
  return out;
}

}  // namespace disiv
