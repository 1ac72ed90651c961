#pragma once

// Dense tensors and a reverse-mode tape.
//
// A BasicGraph records operations in creation order, which is a valid
// topological order, and replays them backwards exactly once. Parameters live
// outside the graph as BasicTensor objects; graph.leaf(t) binds one and
// backward() accumulates d(root)/d(t) into t.grad().
//
// Storage layout: rank 0 is a 1x1 matrix, rank 1 of extent n is a 1xn row,
// rank 2 is rows x cols. Values are row-major.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gcl/errors.hpp"

namespace gcl {

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline std::pair<Index, Index> storage_dims(const Shape& shape) {
  for (Index e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  switch (shape.size()) {
    case 0: return {1, 1};
    case 1: return {1, shape[0]};
    case 2: return {shape[0], shape[1]};
    default: throw UsageError("tensors of rank > 2 are not supported, got " + to_string(shape));
  }
}

}  // namespace detail

template <typename Scalar>
class BasicTensor {
  static_assert(std::is_floating_point_v<Scalar>, "tensor scalar must be floating point");

 public:
  using Matrix = MatrixR<Scalar>;

  BasicTensor() : values_(Matrix::Zero(1, 1)) {}

  BasicTensor(Shape shape, Matrix values, bool requires_grad = false)
      : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
    auto [rows, cols] = detail::storage_dims(shape_);
    if (values_.rows() != rows || values_.cols() != cols)
      throw ShapeError("tensor values " + std::to_string(values_.rows()) + "x" +
                       std::to_string(values_.cols()) + " do not match shape " + to_string(shape_));
  }

  static BasicTensor scalar(Scalar v, bool requires_grad = false) {
    return BasicTensor({}, Matrix::Constant(1, 1, v), requires_grad);
  }
  static BasicTensor vector(std::initializer_list<Scalar> v, bool requires_grad = false) {
    Matrix m(1, static_cast<Index>(v.size()));
    std::copy(v.begin(), v.end(), m.data());
    Shape shape{m.cols()};
    return BasicTensor(std::move(shape), std::move(m), requires_grad);
  }
  template <typename Derived>
  static BasicTensor vector(const Eigen::DenseBase<Derived>& v, bool requires_grad = false) {
    Matrix m = v.derived().reshaped().transpose();
    Shape shape{m.cols()};
    return BasicTensor(std::move(shape), std::move(m), requires_grad);
  }
  template <typename Derived>
  static BasicTensor matrix(const Eigen::DenseBase<Derived>& m, bool requires_grad = false) {
    Matrix copy = m;
    Shape shape{copy.rows(), copy.cols()};
    return BasicTensor(std::move(shape), std::move(copy), requires_grad);
  }
  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto [rows, cols] = detail::storage_dims(shape);
    return BasicTensor(std::move(shape), Matrix::Zero(rows, cols), requires_grad);
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return values_.size(); }
  const Matrix& values() const { return values_; }
  Matrix& values() { return values_; }
  std::span<const Scalar> data() const { return {values_.data(), static_cast<std::size_t>(values_.size())}; }
  std::span<Scalar> data() { return {values_.data(), static_cast<std::size_t>(values_.size())}; }

  Scalar item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape_));
    return values_(0, 0);
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  const std::optional<Matrix>& grad() const { return grad_; }
  void zero_grad() { grad_.reset(); }
  void accumulate_grad(const Matrix& g) {
    if (g.rows() != values_.rows() || g.cols() != values_.cols())
      throw ShapeError("gradient does not match tensor shape " + to_string(shape_));
    if (grad_) *grad_ += g;
    else grad_ = g;
  }

 private:
  Shape shape_;
  Matrix values_;
  bool requires_grad_ = false;
  std::optional<Matrix> grad_;
};

enum class OpKind {
  constant, leaf, affine, relu, tanh, add, sub, mul, div, scale, shift, sum, mean, square,
  sqrt, log, clamp, concat, dot, norm, softmax, log_softmax, row, reshape, select
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::constant: return "constant";
    case OpKind::leaf: return "leaf";
    case OpKind::affine: return "affine";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::shift: return "shift";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::log: return "log";
    case OpKind::clamp: return "clamp";
    case OpKind::concat: return "concat";
    case OpKind::dot: return "dot";
    case OpKind::norm: return "norm";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::row: return "row";
    case OpKind::reshape: return "reshape";
    case OpKind::select: return "select";
  }
  return "?";
}

template <typename Scalar>
class BasicGraph;

/// Handle to a node of a BasicGraph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class BasicVar {
 public:
  using Matrix = MatrixR<Scalar>;

  BasicVar() = default;
  BasicVar(BasicGraph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  BasicGraph<Scalar>& graph() const {
    if (!graph_) throw UsageError("unbound variable");
    return *graph_;
  }
  int id() const { return id_; }
  /// The reference is invalidated when more nodes are recorded on the graph.
  const Matrix& value() const { return graph().value(*this); }
  const Shape& shape() const { return graph().shape(*this); }
  Index rank() const { return static_cast<Index>(shape().size()); }
  Scalar item() const {
    const auto& v = value();
    if (v.size() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
    return v(0, 0);
  }

 private:
  BasicGraph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class BasicGraph {
 public:
  using Matrix = MatrixR<Scalar>;
  using Var = BasicVar<Scalar>;
  using Tensor = BasicTensor<Scalar>;
  /// Receives d(root)/d(output) and adds contributions into the per-node gradient buffers.
  using Backward = std::function<void(const Matrix& grad_out, std::vector<Matrix>& grads)>;

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  Var constant(const Tensor& t) { return push(OpKind::constant, t.shape(), t.values(), {}, false, nullptr); }
  Var constant(Scalar v) { return constant(Tensor::scalar(v)); }

  /// Binds an external tensor. Gradients reach it only if t.requires_grad().
  Var leaf(Tensor& t) {
    Var v = push(OpKind::leaf, t.shape(), t.values(), {}, t.requires_grad(), nullptr);
    nodes_.back().leaf = &t;
    return v;
  }

  Var record(OpKind op, Shape shape, Matrix value, std::vector<int> inputs, Backward backward) {
    bool needs = false;
    for (int in : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(in)).needs_grad;
    return push(op, std::move(shape), std::move(value), std::move(inputs), needs,
                needs ? std::move(backward) : Backward{});
  }

  const Matrix& value(const Var& v) const { return node(v).value; }
  const Shape& shape(const Var& v) const { return node(v).shape; }
  OpKind op(const Var& v) const { return node(v).op; }
  bool needs_grad(const Var& v) const { return node(v).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Accumulates d(root)/d(leaf) into every bound leaf that requires grad.
  /// Nodes are visited once each, newest first; a graph can be replayed only once.
  void backward(const Var& root) {
    const Node& r = node(root);
    if (!r.shape.empty()) throw UsageError("backward requires a scalar root, got " + to_string(r.shape));
    if (consumed_) throw StateError("backward called twice on the same graph");
    consumed_ = true;
    if (!r.needs_grad) return;

    std::vector<Matrix> grads(nodes_.size());
    grads[static_cast<std::size_t>(root.id())] = Matrix::Ones(1, 1);
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      Matrix& g = grads[static_cast<std::size_t>(id)];
      if (!n.needs_grad || g.size() == 0) continue;
      if (n.leaf) n.leaf->accumulate_grad(g);
      else if (n.backward) n.backward(g, grads);
      g.resize(0, 0);
    }
  }

  static void accumulate(std::vector<Matrix>& grads, int id, const Matrix& contribution) {
    Matrix& g = grads[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = contribution;
    else g += contribution;
  }

 private:
  struct Node {
    OpKind op;
    Shape shape;
    Matrix value;
    std::vector<int> inputs;
    bool needs_grad;
    Backward backward;
    Tensor* leaf = nullptr;
  };

  const Node& node(const Var& v) const {
    if (&v.graph() != this) throw UsageError("variable belongs to a different graph");
    return nodes_.at(static_cast<std::size_t>(v.id()));
  }

  Var push(OpKind op, Shape shape, Matrix value, std::vector<int> inputs, bool needs, Backward backward) {
    if (consumed_) throw StateError("cannot record into a graph after backward");
    nodes_.push_back(Node{op, std::move(shape), std::move(value), std::move(inputs), needs, std::move(backward)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

using Tensor = BasicTensor<double>;
using Graph = BasicGraph<double>;
using Var = BasicVar<double>;
using Matrix = MatrixR<double>;

namespace detail {

template <typename Scalar>
BasicGraph<Scalar>& same_graph(const char* op, const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (&a.graph() != &b.graph()) throw UsageError(std::string(op) + ": operands from different graphs");
  return a.graph();
}

template <typename Scalar>
void require_same_shape(OpKind op, const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.shape() != b.shape()) throw ShapeError(op_name(op), a.shape(), b.shape());
}

template <typename Scalar, typename Fwd, typename Deriv>
BasicVar<Scalar> unary(OpKind op, const BasicVar<Scalar>& x, Fwd fwd, Deriv deriv) {
  auto& g = x.graph();
  MatrixR<Scalar> out = x.value().unaryExpr(fwd);
  const int xi = x.id();
  return g.record(op, x.shape(), std::move(out), {xi},
                  [x, xi, deriv](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    MatrixR<Scalar> d = x.value().unaryExpr(deriv);
                    BasicGraph<Scalar>::accumulate(grads, xi, gout.cwiseProduct(d));
                  });
}

}  // namespace detail

/// x W + b, with b broadcast over rows. x is [in] or [batch, in]; W is [in, out]; b is [out].
template <typename Scalar>
BasicVar<Scalar> affine(const BasicVar<Scalar>& x, const BasicVar<Scalar>& W, const BasicVar<Scalar>& b) {
  auto& g = detail::same_graph("affine", x, W);
  detail::same_graph("affine", x, b);
  if (W.rank() != 2 || x.rank() < 1 || x.shape().back() != W.shape()[0])
    throw ShapeError("affine", x.shape(), W.shape());
  if (b.rank() != 1 || b.shape()[0] != W.shape()[1]) throw ShapeError("affine", W.shape(), b.shape());

  MatrixR<Scalar> out = x.value() * W.value();
  out.rowwise() += b.value().row(0);
  Shape shape = x.shape();
  shape.back() = W.shape()[1];
  const int xi = x.id(), wi = W.id(), bi = b.id();
  return g.record(OpKind::affine, std::move(shape), std::move(out), {xi, wi, bi},
                  [x, W, xi, wi, bi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    auto& gr = x.graph();
                    if (gr.needs_grad(x)) BasicGraph<Scalar>::accumulate(grads, xi, gout * W.value().transpose());
                    if (gr.needs_grad(W)) BasicGraph<Scalar>::accumulate(grads, wi, x.value().transpose() * gout);
                    BasicGraph<Scalar>::accumulate(grads, bi, gout.colwise().sum());
                  });
}

/// max(x, 0); the derivative at exactly 0 is taken as 0.
template <typename Scalar>
BasicVar<Scalar> relu(const BasicVar<Scalar>& x) {
  return detail::unary(OpKind::relu, x, [](Scalar v) { return v > 0 ? v : Scalar(0); },
                       [](Scalar v) { return v > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
BasicVar<Scalar> tanh(const BasicVar<Scalar>& x) {
  return detail::unary(OpKind::tanh, x, [](Scalar v) { return std::tanh(v); },
                       [](Scalar v) {
                         Scalar t = std::tanh(v);
                         return Scalar(1) - t * t;
                       });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  auto& g = detail::same_graph("add", a, b);
  detail::require_same_shape(OpKind::add, a, b);
  const int ai = a.id(), bi = b.id();
  return g.record(OpKind::add, a.shape(), a.value() + b.value(), {ai, bi},
                  [ai, bi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    BasicGraph<Scalar>::accumulate(grads, ai, gout);
                    BasicGraph<Scalar>::accumulate(grads, bi, gout);
                  });
}

template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  auto& g = detail::same_graph("sub", a, b);
  detail::require_same_shape(OpKind::sub, a, b);
  const int ai = a.id(), bi = b.id();
  return g.record(OpKind::sub, a.shape(), a.value() - b.value(), {ai, bi},
                  [ai, bi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    BasicGraph<Scalar>::accumulate(grads, ai, gout);
                    BasicGraph<Scalar>::accumulate(grads, bi, -gout);
                  });
}

/// Elementwise product.
template <typename Scalar>
BasicVar<Scalar> operator*(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  auto& g = detail::same_graph("mul", a, b);
  detail::require_same_shape(OpKind::mul, a, b);
  const int ai = a.id(), bi = b.id();
  return g.record(OpKind::mul, a.shape(), a.value().cwiseProduct(b.value()), {ai, bi},
                  [a, b, ai, bi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    BasicGraph<Scalar>::accumulate(grads, ai, gout.cwiseProduct(b.value()));
                    BasicGraph<Scalar>::accumulate(grads, bi, gout.cwiseProduct(a.value()));
                  });
}

/// Elementwise quotient; every element of b must be nonzero.
template <typename Scalar>
BasicVar<Scalar> operator/(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  auto& g = detail::same_graph("div", a, b);
  detail::require_same_shape(OpKind::div, a, b);
  if ((b.value().array() == Scalar(0)).any()) throw DomainError("div: division by zero");
  const int ai = a.id(), bi = b.id();
  return g.record(OpKind::div, a.shape(), a.value().cwiseQuotient(b.value()), {ai, bi},
                  [a, b, ai, bi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    const auto& bv = b.value();
                    BasicGraph<Scalar>::accumulate(grads, ai, gout.cwiseQuotient(bv));
                    MatrixR<Scalar> gb = -(gout.cwiseProduct(a.value())).cwiseQuotient(bv.cwiseProduct(bv));
                    BasicGraph<Scalar>::accumulate(grads, bi, gb);
                  });
}

/// Multiplication by a constant.
template <typename Scalar>
BasicVar<Scalar> scale(const BasicVar<Scalar>& x, Scalar s) {
  const int xi = x.id();
  return x.graph().record(OpKind::scale, x.shape(), x.value() * s, {xi},
                          [xi, s](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            BasicGraph<Scalar>::accumulate(grads, xi, gout * s);
                          });
}

template <typename Scalar>
BasicVar<Scalar> operator*(Scalar s, const BasicVar<Scalar>& x) { return scale(x, s); }
template <typename Scalar>
BasicVar<Scalar> operator*(const BasicVar<Scalar>& x, Scalar s) { return scale(x, s); }
template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& x) { return scale(x, Scalar(-1)); }

/// Addition of a constant to every element.
template <typename Scalar>
BasicVar<Scalar> shift(const BasicVar<Scalar>& x, Scalar c) {
  const int xi = x.id();
  MatrixR<Scalar> out = x.value().array() + c;
  return x.graph().record(OpKind::shift, x.shape(), std::move(out), {xi},
                          [xi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            BasicGraph<Scalar>::accumulate(grads, xi, gout);
                          });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& x, Scalar c) { return shift(x, c); }
template <typename Scalar>
BasicVar<Scalar> operator+(Scalar c, const BasicVar<Scalar>& x) { return shift(x, c); }

template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& x) {
  const int xi = x.id();
  const Index rows = x.value().rows(), cols = x.value().cols();
  return x.graph().record(OpKind::sum, {}, MatrixR<Scalar>::Constant(1, 1, x.value().sum()), {xi},
                          [xi, rows, cols](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            BasicGraph<Scalar>::accumulate(grads, xi, MatrixR<Scalar>::Constant(rows, cols, gout(0, 0)));
                          });
}

template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& x) {
  const int xi = x.id();
  const Index rows = x.value().rows(), cols = x.value().cols();
  const Scalar n = static_cast<Scalar>(x.value().size());
  return x.graph().record(OpKind::mean, {}, MatrixR<Scalar>::Constant(1, 1, x.value().sum() / n), {xi},
                          [xi, rows, cols, n](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            BasicGraph<Scalar>::accumulate(grads, xi,
                                                           MatrixR<Scalar>::Constant(rows, cols, gout(0, 0) / n));
                          });
}

template <typename Scalar>
BasicVar<Scalar> square(const BasicVar<Scalar>& x) {
  return detail::unary(OpKind::square, x, [](Scalar v) { return v * v; }, [](Scalar v) { return 2 * v; });
}

/// Elementwise square root. Negative input is a domain error; the derivative at 0 is taken as 0.
template <typename Scalar>
BasicVar<Scalar> sqrt(const BasicVar<Scalar>& x) {
  if ((x.value().array() < Scalar(0)).any()) throw DomainError("sqrt: negative input");
  return detail::unary(OpKind::sqrt, x, [](Scalar v) { return std::sqrt(v); },
                       [](Scalar v) { return v > 0 ? Scalar(0.5) / std::sqrt(v) : Scalar(0); });
}

/// Natural log; every element must be strictly positive.
template <typename Scalar>
BasicVar<Scalar> log(const BasicVar<Scalar>& x) {
  if (!(x.value().array() > Scalar(0)).all()) throw DomainError("log: non-positive input");
  return detail::unary(OpKind::log, x, [](Scalar v) { return std::log(v); }, [](Scalar v) { return 1 / v; });
}

/// Clamp into [lo, hi]. Gradient passes through strictly inside the interval and is 0 elsewhere,
/// boundaries included.
template <typename Scalar>
BasicVar<Scalar> clamp(const BasicVar<Scalar>& x, Scalar lo, Scalar hi) {
  if (!(lo <= hi)) throw UsageError("clamp: lo must not exceed hi");
  return detail::unary(OpKind::clamp, x, [lo, hi](Scalar v) { return std::clamp(v, lo, hi); },
                       [lo, hi](Scalar v) { return (v > lo && v < hi) ? Scalar(1) : Scalar(0); });
}

/// Concatenation along the last axis. Both operands rank 1, or rank 2 with equal row counts.
template <typename Scalar>
BasicVar<Scalar> concat(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  auto& g = detail::same_graph("concat", a, b);
  if (a.rank() != b.rank() || a.rank() < 1 || (a.rank() == 2 && a.shape()[0] != b.shape()[0]))
    throw ShapeError("concat", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  MatrixR<Scalar> out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  Shape shape = a.shape();
  shape.back() += b.shape().back();
  const int ai = a.id(), bi = b.id();
  const Index split = av.cols(), rest = bv.cols();
  return g.record(OpKind::concat, std::move(shape), std::move(out), {ai, bi},
                  [ai, bi, split, rest](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    BasicGraph<Scalar>::accumulate(grads, ai, gout.leftCols(split));
                    BasicGraph<Scalar>::accumulate(grads, bi, gout.rightCols(rest));
                  });
}

template <typename Scalar>
BasicVar<Scalar> dot(const BasicVar<Scalar>& u, const BasicVar<Scalar>& v) {
  auto& g = detail::same_graph("dot", u, v);
  if (u.rank() != 1 || u.shape() != v.shape()) throw ShapeError("dot", u.shape(), v.shape());
  const int ui = u.id(), vi = v.id();
  Scalar d = u.value().row(0).dot(v.value().row(0));
  return g.record(OpKind::dot, {}, MatrixR<Scalar>::Constant(1, 1, d), {ui, vi},
                  [u, v, ui, vi](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                    BasicGraph<Scalar>::accumulate(grads, ui, v.value() * gout(0, 0));
                    BasicGraph<Scalar>::accumulate(grads, vi, u.value() * gout(0, 0));
                  });
}

/// Euclidean norm of a vector; the gradient at the zero vector is taken as 0.
template <typename Scalar>
BasicVar<Scalar> norm(const BasicVar<Scalar>& u) {
  if (u.rank() != 1) throw ShapeError("norm: expected a vector, got " + to_string(u.shape()));
  const int ui = u.id();
  Scalar n = u.value().norm();
  return u.graph().record(OpKind::norm, {}, MatrixR<Scalar>::Constant(1, 1, n), {ui},
                          [u, ui, n](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            if (n > 0) BasicGraph<Scalar>::accumulate(grads, ui, u.value() * (gout(0, 0) / n));
                          });
}

/// Softmax over the last axis.
template <typename Scalar>
BasicVar<Scalar> softmax(const BasicVar<Scalar>& x) {
  if (x.rank() < 1) throw ShapeError("softmax: expected rank >= 1, got " + to_string(x.shape()));
  MatrixR<Scalar> y = x.value();
  for (Index r = 0; r < y.rows(); ++r) {
    y.row(r).array() -= y.row(r).maxCoeff();
    y.row(r) = y.row(r).array().exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  const int xi = x.id();
  MatrixR<Scalar> saved = y;
  return x.graph().record(OpKind::softmax, x.shape(), std::move(y), {xi},
                          [xi, saved](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            MatrixR<Scalar> gin = saved.cwiseProduct(gout);
                            for (Index r = 0; r < gin.rows(); ++r) gin.row(r) -= saved.row(r) * gin.row(r).sum();
                            BasicGraph<Scalar>::accumulate(grads, xi, gin);
                          });
}

/// log(softmax(x)) over the last axis, computed with the max-shift for stability.
template <typename Scalar>
BasicVar<Scalar> log_softmax(const BasicVar<Scalar>& x) {
  if (x.rank() < 1) throw ShapeError("log_softmax: expected rank >= 1, got " + to_string(x.shape()));
  MatrixR<Scalar> y = x.value();
  for (Index r = 0; r < y.rows(); ++r) {
    Scalar m = y.row(r).maxCoeff();
    Scalar lse = m + std::log((y.row(r).array() - m).exp().sum());
    y.row(r).array() -= lse;
  }
  const int xi = x.id();
  MatrixR<Scalar> probs = y.array().exp().matrix();
  return x.graph().record(OpKind::log_softmax, x.shape(), std::move(y), {xi},
                          [xi, probs](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            MatrixR<Scalar> gin = gout;
                            for (Index r = 0; r < gin.rows(); ++r) gin.row(r) -= probs.row(r) * gout.row(r).sum();
                            BasicGraph<Scalar>::accumulate(grads, xi, gin);
                          });
}

/// Row i of a matrix as a vector.
template <typename Scalar>
BasicVar<Scalar> row(const BasicVar<Scalar>& x, Index i) {
  if (x.rank() != 2) throw ShapeError("row: expected a matrix, got " + to_string(x.shape()));
  if (i < 0 || i >= x.shape()[0]) throw UsageError("row: index " + std::to_string(i) + " out of range");
  const int xi = x.id();
  const Index rows = x.shape()[0], cols = x.shape()[1];
  return x.graph().record(OpKind::row, {cols}, x.value().row(i), {xi},
                          [xi, i, rows, cols](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            MatrixR<Scalar> g = MatrixR<Scalar>::Zero(rows, cols);
                            g.row(i) = gout.row(0);
                            BasicGraph<Scalar>::accumulate(grads, xi, g);
                          });
}

/// Same values, new shape with equal element count.
template <typename Scalar>
BasicVar<Scalar> reshape(const BasicVar<Scalar>& x, Shape shape) {
  auto [rows, cols] = detail::storage_dims(shape);
  if (rows * cols != x.value().size()) throw ShapeError("reshape", x.shape(), shape);
  MatrixR<Scalar> out = x.value().template reshaped<Eigen::RowMajor>(rows, cols);
  const int xi = x.id();
  const Index r0 = x.value().rows(), c0 = x.value().cols();
  return x.graph().record(OpKind::reshape, std::move(shape), std::move(out), {xi},
                          [xi, r0, c0](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            MatrixR<Scalar> g = gout.template reshaped<Eigen::RowMajor>(r0, c0);
                            BasicGraph<Scalar>::accumulate(grads, xi, g);
                          });
}

/// Picks x[i, columns[i]] for every row i of a matrix.
template <typename Scalar>
BasicVar<Scalar> select(const BasicVar<Scalar>& x, std::span<const int> columns) {
  if (x.rank() != 2 || static_cast<Index>(columns.size()) != x.shape()[0])
    throw ShapeError("select", x.shape(), Shape{static_cast<Index>(columns.size())});
  const Index rows = x.shape()[0], cols = x.shape()[1];
  std::vector<int> picks(columns.begin(), columns.end());
  MatrixR<Scalar> out(1, rows);
  for (Index r = 0; r < rows; ++r) {
    int c = picks[static_cast<std::size_t>(r)];
    if (c < 0 || c >= cols) throw UsageError("select: column " + std::to_string(c) + " out of range");
    out(0, r) = x.value()(r, c);
  }
  const int xi = x.id();
  return x.graph().record(OpKind::select, {rows}, std::move(out), {xi},
                          [xi, rows, cols, picks](const MatrixR<Scalar>& gout, std::vector<MatrixR<Scalar>>& grads) {
                            MatrixR<Scalar> g = MatrixR<Scalar>::Zero(rows, cols);
                            for (Index r = 0; r < rows; ++r) g(r, picks[static_cast<std::size_t>(r)]) = gout(0, r);
                            BasicGraph<Scalar>::accumulate(grads, xi, g);
                          });
}

}  // namespace gcl
