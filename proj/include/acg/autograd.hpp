#pragma once

// Dense reverse-mode differentiation over Eigen matrices.
//
// A Graph records every operation in creation order; backward() replays the
// recorded closures in exact reverse order. Vectors are column matrices.
// Parameters live outside any graph; a graph references their storage and
// accumulates gradients straight into Parameter::grad.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "acg/errors.hpp"
#include "acg/rng.hpp"

namespace acg::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
};

template <typename Derived>
Shape shape_of(const Eigen::EigenBase<Derived>& m) {
  return {m.rows(), m.cols()};
}

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Affine,
  ScalarMul,
  Tanh,
  Sigmoid,
  Dropout,
  Softmax,
  Concat,
  Block,
  Transpose,
  BroadcastAdd,
  Lookup,
  ScatterAdd,
  Sum,
  Nll,
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  // Set whenever a graph references this parameter; cleared by zero_grad().
  bool touched = false;

  Shape shape() const { return shape_of(value); }
  void zero_grad() {
    grad.setZero(value.rows(), value.cols());
    touched = false;
  }
};

/// Ordered registry of named parameters. Element addresses are stable.
template <typename Scalar>
class ParameterSet {
 public:
  Parameter<Scalar>& add(std::string name, Matrix<Scalar> init) {
    for (const auto& p : params_) {
      if (p.name == name) throw ContractError("duplicate parameter name: " + name);
    }
    Parameter<Scalar>& p = params_.emplace_back();
    p.name = std::move(name);
    p.value = std::move(init);
    p.zero_grad();
    return p;
  }

  Parameter<Scalar>* find(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  const Parameter<Scalar>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  Parameter<Scalar>& at(std::string_view name) {
    auto* p = find(name);
    if (p == nullptr) throw ContractError("unknown parameter: " + std::string(name));
    return *p;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  std::vector<Parameter<Scalar>*> pointers() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter<Scalar>> params_;
};

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  std::size_t node_id() const { return id_; }
  Graph<Scalar>& graph() const { return *graph_; }

  const Matrix<Scalar>& value() const { return graph_->value(id_); }
  /// Accumulated gradient, or nullptr if backward never reached this node.
  const Matrix<Scalar>* grad() const { return graph_->grad(id_); }

  Shape shape() const { return shape_of(value()); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape().str());
    return value()(0, 0);
  }

 private:
  Graph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using Backprop = std::function<void(Graph&, const Mat&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<Scalar> constant(Mat value, bool requires_grad = false) {
    Node& n = nodes_.emplace_back();
    n.op = Op::Constant;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return {this, nodes_.size() - 1};
  }

  Tensor<Scalar> parameter(Parameter<Scalar>& p) {
    Node& n = nodes_.emplace_back();
    n.op = Op::Parameter;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    if (grad_enabled_) p.touched = true;
    return {this, nodes_.size() - 1};
  }

  /// Appends an operation node. `backprop` receives the node's output
  /// gradient and must accumulate into the inputs it depends on.
  Tensor<Scalar> record(Op op, std::initializer_list<Tensor<Scalar>> inputs, Mat value,
                        Backprop backprop) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (const auto& t : inputs) {
      if (&t.graph() != this) throw ContractError("tensor belongs to a different graph");
      n.inputs.push_back(t.node_id());
      n.requires_grad = n.requires_grad || nodes_[t.node_id()].requires_grad;
    }
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Tensor<Scalar> record(Op op, const std::vector<Tensor<Scalar>>& inputs, Mat value,
                        Backprop backprop) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (const auto& t : inputs) {
      if (&t.graph() != this) throw ContractError("tensor belongs to a different graph");
      n.inputs.push_back(t.node_id());
      n.requires_grad = n.requires_grad || nodes_[t.node_id()].requires_grad;
    }
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Mat& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->value : n.value;
  }

  const Mat* grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.param != nullptr) return &n.param->grad;
    return n.grad.size() == 0 && n.value.size() != 0 ? nullptr : &n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Op op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// With gradients disabled, parameters enter as constants and no
  /// backward closures are kept (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  void mark_stochastic() { stochastic_ = true; }
  /// True once any training-mode dropout with a nonzero rate was recorded.
  bool has_stochastic_nodes() const { return stochastic_; }

  /// Gradient storage for `id`, zero-initialized on first use.
  Mat& grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param != nullptr) return n.param->grad;
    if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
      n.grad.setZero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
    if (!nodes_[id].requires_grad) return;
    grad_sink(id).noalias() += delta;
  }

  /// Populates gradients of everything `loss` depends on. Intermediate
  /// gradients are reset first; parameter and leaf gradients accumulate
  /// across calls until zeroed.
  void backward(const Tensor<Scalar>& loss) {
    if (&loss.graph() != this) throw ContractError("backward: loss belongs to a different graph");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + loss.shape().str());
    const std::size_t root = loss.node_id();
    for (std::size_t i = 0; i <= root; ++i) {
      Node& n = nodes_[i];
      if (n.backprop) n.grad.resize(0, 0);
    }
    accumulate(root, Mat::Ones(1, 1));
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backprop || n.grad.size() == 0) continue;
      n.backprop(*this, n.grad);
    }
  }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<std::size_t> inputs;
    Mat value;
    Mat grad;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
    Backprop backprop;
  };

  std::deque<Node> nodes_;
  bool stochastic_ = false;
  bool grad_enabled_ = true;
};

namespace detail {

template <typename Scalar>
Graph<Scalar>& graph_of(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename Scalar>
void require_vector(const char* op, const Tensor<Scalar>& a) {
  if (a.cols() != 1 && a.rows() != 1) {
    throw DimensionError(std::string(op) + ": expected a vector, got " + a.shape().str());
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Graph<Scalar>& g = detail::graph_of(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ: " + a.shape().str() + " x " + b.shape().str());
  }
  Matrix<Scalar> out = a.value() * b.value();
  const std::size_t ia = a.node_id();
  const std::size_t ib = b.node_id();
  return g.record(Op::MatMul, {a, b}, std::move(out), [ia, ib](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    if (g.requires_grad(ia)) g.accumulate(ia, d * g.value(ib).transpose());
    if (g.requires_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * d);
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Graph<Scalar>& g = detail::graph_of(a, b);
  detail::require_same_shape("add", a, b);
  const std::size_t ia = a.node_id();
  const std::size_t ib = b.node_id();
  return g.record(Op::Add, {a, b}, a.value() + b.value(), [ia, ib](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    g.accumulate(ia, d);
    g.accumulate(ib, d);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Graph<Scalar>& g = detail::graph_of(a, b);
  detail::require_same_shape("sub", a, b);
  const std::size_t ia = a.node_id();
  const std::size_t ib = b.node_id();
  return g.record(Op::Sub, {a, b}, a.value() - b.value(), [ia, ib](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    g.accumulate(ia, d);
    g.accumulate(ib, -d);
  });
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Graph<Scalar>& g = detail::graph_of(a, b);
  detail::require_same_shape("mul", a, b);
  const std::size_t ia = a.node_id();
  const std::size_t ib = b.node_id();
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return g.record(Op::Mul, {a, b}, std::move(out), [ia, ib](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    if (g.requires_grad(ia)) g.accumulate(ia, d.cwiseProduct(g.value(ib)));
    if (g.requires_grad(ib)) g.accumulate(ib, d.cwiseProduct(g.value(ia)));
  });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}

/// scale * a + shift, elementwise.
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& a, Scalar scale, Scalar shift) {
  const std::size_t ia = a.node_id();
  Matrix<Scalar> out = (a.value().array() * scale + shift).matrix();
  return a.graph().record(Op::Affine, {a}, std::move(out), [ia, scale](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    g.accumulate(ia, d * scale);
  });
}

/// Scales every entry of `v` by the 1x1 tensor `s`.
template <typename Scalar>
Tensor<Scalar> scalar_mul(const Tensor<Scalar>& s, const Tensor<Scalar>& v) {
  Graph<Scalar>& g = detail::graph_of(s, v);
  if (s.size() != 1) throw DimensionError("scalar_mul: scale must be 1x1, got " + s.shape().str());
  const std::size_t is = s.node_id();
  const std::size_t iv = v.node_id();
  Matrix<Scalar> out = v.value() * s.item();
  return g.record(Op::ScalarMul, {s, v}, std::move(out), [is, iv](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    if (g.requires_grad(is)) {
      Matrix<Scalar> ds(1, 1);
      ds(0, 0) = d.cwiseProduct(g.value(iv)).sum();
      g.accumulate(is, ds);
    }
    if (g.requires_grad(iv)) g.accumulate(iv, d * g.value(is)(0, 0));
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  const std::size_t ia = a.node_id();
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  Graph<Scalar>& g = a.graph();
  const std::size_t self = g.size();
  return g.record(Op::Tanh, {a}, std::move(out), [ia, self](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    const auto& y = g.value(self);
    g.accumulate(ia, (d.array() * (1 - y.array().square())).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  const std::size_t ia = a.node_id();
  Matrix<Scalar> out = (1 / (1 + (-a.value().array()).exp())).matrix();
  Graph<Scalar>& g = a.graph();
  const std::size_t self = g.size();
  return g.record(Op::Sigmoid, {a}, std::move(out), [ia, self](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    const auto& y = g.value(self);
    g.accumulate(ia, (d.array() * y.array() * (1 - y.array())).matrix());
  });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) at training time;
/// identity (the same node) at inference or with rate 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  const Scalar keep_scale = Scalar(1) / Scalar(1 - rate);
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) mask(i) = rng.uniform() < rate ? Scalar(0) : keep_scale;
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  const std::size_t ia = a.node_id();
  Graph<Scalar>& g = a.graph();
  g.mark_stochastic();
  return g.record(Op::Dropout, {a}, std::move(out),
                  [ia, mask = std::move(mask)](Graph<Scalar>& g, const Matrix<Scalar>& d) {
                    g.accumulate(ia, d.cwiseProduct(mask));
                  });
}

/// Numerically stable softmax over all entries of a vector.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  detail::require_vector("softmax", x);
  if (x.size() == 0) throw DimensionError("softmax: empty input");
  if (!x.value().allFinite()) throw NumericError("softmax: non-finite input");
  const Scalar peak = x.value().maxCoeff();
  Matrix<Scalar> out = (x.value().array() - peak).exp().matrix();
  out /= out.sum();
  const std::size_t ix = x.node_id();
  Graph<Scalar>& g = x.graph();
  const std::size_t self = g.size();
  return g.record(Op::Softmax, {x}, std::move(out), [ix, self](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    const auto& y = g.value(self);
    const Scalar dot = d.cwiseProduct(y).sum();
    g.accumulate(ix, (y.array() * (d.array() - dot)).matrix());
  });
}

/// Concatenates along rows (axis 0) or columns (axis 1). Empty operands
/// are ignored.
template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, int axis) {
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  std::vector<Tensor<Scalar>> kept;
  for (const auto& p : parts) {
    if (p.size() != 0) kept.push_back(p);
  }
  if (kept.empty()) {
    if (parts.empty()) throw ContractError("concat: no operands");
    return parts.front();
  }
  if (kept.size() == 1) return kept.front();
  Graph<Scalar>& g = kept.front().graph();
  Index rows = 0;
  Index cols = 0;
  for (const auto& p : kept) {
    if (&p.graph() != &g) throw ContractError("concat: operands belong to different graphs");
    const Index fixed = axis == 0 ? p.cols() : p.rows();
    const Index expected = axis == 0 ? kept.front().cols() : kept.front().rows();
    if (fixed != expected) {
      throw DimensionError("concat: incompatible shapes " + kept.front().shape().str() + " and " + p.shape().str());
    }
    if (axis == 0) {
      rows += p.rows();
      cols = p.cols();
    } else {
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : kept) {
    ids.push_back(p.node_id());
    offsets.push_back(offset);
    if (axis == 0) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  return g.record(Op::Concat, kept, std::move(out),
                  [ids = std::move(ids), offsets = std::move(offsets), axis](Graph<Scalar>& g, const Matrix<Scalar>& d) {
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!g.requires_grad(ids[k])) continue;
                      const auto& v = g.value(ids[k]);
                      if (axis == 0) {
                        g.accumulate(ids[k], d.middleRows(offsets[k], v.rows()));
                      } else {
                        g.accumulate(ids[k], d.middleCols(offsets[k], v.cols()));
                      }
                    }
                  });
}

template <typename Scalar>
Tensor<Scalar> concat(std::initializer_list<Tensor<Scalar>> parts, int axis) {
  return concat(std::span<const Tensor<Scalar>>(parts.begin(), parts.size()), axis);
}

/// Rectangular sub-block [row, row+rows) x [col, col+cols).
template <typename Scalar>
Tensor<Scalar> block(const Tensor<Scalar>& a, Index row, Index col, Index rows, Index cols) {
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw DimensionError("block: [" + std::to_string(row) + "+" + std::to_string(rows) + ", " +
                         std::to_string(col) + "+" + std::to_string(cols) + "] out of bounds for " + a.shape().str());
  }
  Matrix<Scalar> out = a.value().block(row, col, rows, cols);
  const std::size_t ia = a.node_id();
  return a.graph().record(Op::Block, {a}, std::move(out),
                          [ia, row, col, rows, cols](Graph<Scalar>& g, const Matrix<Scalar>& d) {
                            if (g.requires_grad(ia)) g.grad_sink(ia).block(row, col, rows, cols) += d;
                          });
}

template <typename Scalar>
Tensor<Scalar> rows(const Tensor<Scalar>& a, Index start, Index count) {
  return block(a, start, 0, count, a.cols());
}

template <typename Scalar>
Tensor<Scalar> column(const Tensor<Scalar>& a, Index j) {
  return block(a, 0, j, a.rows(), 1);
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  const std::size_t ia = a.node_id();
  return a.graph().record(Op::Transpose, {a}, std::move(out), [ia](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    g.accumulate(ia, d.transpose());
  });
}

/// Adds the column vector `v` to every column of `m`.
template <typename Scalar>
Tensor<Scalar> broadcast_add(const Tensor<Scalar>& m, const Tensor<Scalar>& v) {
  Graph<Scalar>& g = detail::graph_of(m, v);
  if (v.cols() != 1 || v.rows() != m.rows()) {
    throw DimensionError("broadcast_add: cannot add " + v.shape().str() + " to columns of " + m.shape().str());
  }
  Matrix<Scalar> out = m.value().colwise() + v.value().col(0);
  const std::size_t im = m.node_id();
  const std::size_t iv = v.node_id();
  return g.record(Op::BroadcastAdd, {m, v}, std::move(out), [im, iv](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    g.accumulate(im, d);
    if (g.requires_grad(iv)) g.accumulate(iv, d.rowwise().sum());
  });
}

/// Gathers rows of `table` as columns: result(:, j) = table.row(ids[j])^T.
template <typename Scalar>
Tensor<Scalar> lookup(const Tensor<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> out(table.cols(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || ids[j] >= table.rows()) {
      throw DimensionError("lookup: id " + std::to_string(ids[j]) + " outside table " + table.shape().str());
    }
    out.col(static_cast<Index>(j)) = table.value().row(ids[j]).transpose();
  }
  const std::size_t it = table.node_id();
  return table.graph().record(Op::Lookup, {table}, std::move(out),
                              [it, ids = std::vector<int>(ids.begin(), ids.end())](Graph<Scalar>& g, const Matrix<Scalar>& d) {
                                if (!g.requires_grad(it)) return;
                                auto& sink = g.grad_sink(it);
                                for (std::size_t j = 0; j < ids.size(); ++j) {
                                  sink.row(ids[j]) += d.col(static_cast<Index>(j)).transpose();
                                }
                              });
}

/// out(targets[i]) += v(i) for a column vector v; out has `size` rows.
template <typename Scalar>
Tensor<Scalar> scatter_add(const Tensor<Scalar>& v, std::span<const int> targets, Index size) {
  if (v.cols() != 1 || v.rows() != static_cast<Index>(targets.size())) {
    throw DimensionError("scatter_add: " + v.shape().str() + " does not match " + std::to_string(targets.size()) +
                         " targets");
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(size, 1);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= size) {
      throw DimensionError("scatter_add: target " + std::to_string(targets[i]) + " outside [0, " +
                           std::to_string(size) + ")");
    }
    out(targets[i], 0) += v.value()(static_cast<Index>(i), 0);
  }
  const std::size_t iv = v.node_id();
  return v.graph().record(
      Op::ScatterAdd, {v}, std::move(out),
      [iv, targets = std::vector<int>(targets.begin(), targets.end())](Graph<Scalar>& g, const Matrix<Scalar>& d) {
        if (!g.requires_grad(iv)) return;
        auto& sink = g.grad_sink(iv);
        for (std::size_t i = 0; i < targets.size(); ++i) sink(static_cast<Index>(i), 0) += d(targets[i], 0);
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.node_id();
  return a.graph().record(Op::Sum, {a}, std::move(out), [ia](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    const auto& v = g.value(ia);
    g.accumulate(ia, Matrix<Scalar>::Constant(v.rows(), v.cols(), d(0, 0)));
  });
}

/// Probability floor applied inside the logarithm of nll_loss.
template <typename Scalar>
inline constexpr Scalar kProbabilityFloor = Scalar(1e-12);

/// -log(dist[target] + floor) for a probability vector `dist`.
template <typename Scalar>
Tensor<Scalar> nll_loss(const Tensor<Scalar>& dist, Index target) {
  detail::require_vector("nll_loss", dist);
  if (target < 0 || target >= dist.size()) {
    throw ContractError("nll_loss: target " + std::to_string(target) + " outside [0, " + std::to_string(dist.size()) +
                        ")");
  }
  const Scalar total = dist.value().sum();
  if (!(std::abs(total - Scalar(1)) <= Scalar(1e-6))) {
    throw ContractError("nll_loss: input is not a probability vector (sum " + std::to_string(double(total)) + ")");
  }
  const Scalar p = dist.value()(target);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = -std::log(p + kProbabilityFloor<Scalar>);
  const std::size_t id = dist.node_id();
  return dist.graph().record(Op::Nll, {dist}, std::move(out), [id, target](Graph<Scalar>& g, const Matrix<Scalar>& d) {
    if (!g.requires_grad(id)) return;
    const Scalar p = g.value(id)(target);
    g.grad_sink(id)(target) += -d(0, 0) / (p + kProbabilityFloor<Scalar>);
  });
}

/// Sum of a list of scalar tensors (a chained add).
template <typename Scalar>
Tensor<Scalar> sum_all(std::span<const Tensor<Scalar>> terms) {
  if (terms.empty()) throw ContractError("sum_all: no terms");
  Tensor<Scalar> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

template <typename Scalar>
struct GradCheckReport {
  Scalar max_relative_error = 0;
  std::size_t entries_checked = 0;
  bool rejected = false;
  std::string reason;
  std::string worst_entry;
};

/// Compares backward() gradients of `loss_fn` against central differences on
/// every entry of `params`, reporting the worst relative error with
/// denominator max(|a|, |b|, 1e-8). Never throws; stochastic or non-scalar
/// objectives are reported as rejected.
template <typename Scalar, typename LossFn>
GradCheckReport<Scalar> grad_check(LossFn&& loss_fn, std::span<Parameter<Scalar>* const> params,
                                   Scalar step = Scalar(1e-5)) {
  GradCheckReport<Scalar> report;
  std::vector<Matrix<Scalar>> analytic;
  try {
    for (auto* p : params) p->zero_grad();
    Graph<Scalar> g;
    Tensor<Scalar> loss = loss_fn(g);
    if (g.has_stochastic_nodes()) {
      report.rejected = true;
      report.reason = "objective contains training-mode dropout";
      return report;
    }
    if (loss.size() != 1) {
      report.rejected = true;
      report.reason = "objective is not scalar";
      return report;
    }
    g.backward(loss);
    for (auto* p : params) analytic.push_back(p->grad);

    auto evaluate = [&]() {
      Graph<Scalar> fg;
      return loss_fn(fg).item();
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter<Scalar>& p = *params[k];
      for (Index i = 0; i < p.value.size(); ++i) {
        const Scalar saved = p.value(i);
        p.value(i) = saved + step;
        const Scalar plus = evaluate();
        p.value(i) = saved - step;
        const Scalar minus = evaluate();
        p.value(i) = saved;
        const Scalar numeric = (plus - minus) / (2 * step);
        const Scalar exact = analytic[k](i);
        const Scalar denom = std::max({std::abs(numeric), std::abs(exact), Scalar(1e-8)});
        const Scalar err = std::abs(numeric - exact) / denom;
        ++report.entries_checked;
        if (!(err <= report.max_relative_error)) {
          report.max_relative_error = err;
          char buf[96];
          std::snprintf(buf, sizeof(buf), "[%ld] analytic %.6e numeric %.6e", static_cast<long>(i), double(exact),
                        double(numeric));
          report.worst_entry = p.name + buf;
        }
      }
    }
  } catch (const std::exception& e) {
    report.rejected = true;
    report.reason = e.what();
  }
  for (auto* p : params) p->zero_grad();
  return report;
}

}  // namespace acg::ad
