#pragma once

// Dense rank-2 tensors, a reverse-mode autodiff tape, and ADAM.
//
// A Tape records every primitive applied to its Vars in execution order.
// Parameters enter a tape through Tape::leaf(), which copies their values and
// remembers where to accumulate gradients; backward() walks the nodes in exact
// reverse order and adds d(root)/d(leaf) into Tensor::grad.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "age/error.hpp"

namespace age::nd {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    check_extents();
  }
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_extents();
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape (" + std::to_string(rows_) + "," +
                       std::to_string(cols_) + ")");
    }
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Tensor::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
  }
  static Tensor row(std::initializer_list<double> values) {
    return Tensor(1, values.size(), std::vector<double>(values));
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return rows_ == 1 && cols_ == 1; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const {
    if (!is_scalar()) throw ShapeError("Tensor::item: tensor is " + shape_string());
    return data_[0];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  // Empty until the first backward() that reaches this tensor.
  bool has_grad() const { return !grad_.empty(); }
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }
  void zero_grad() { grad_.assign(data_.size(), 0.0); }
  void clear_grad() { grad_.clear(); }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "," + std::to_string(cols_) + ")";
  }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  void check_extents() const {
    if (rows_ == 0 || cols_ == 0) {
      throw ShapeError("Tensor: extents must be positive, got (" + std::to_string(rows_) +
                       "," + std::to_string(cols_) + ")");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  ScalarMul,
  AddScalar,
  Matmul,
  Sum,
  SumOverRows,  // (R,C) -> (1,C)
  SumOverCols,  // (R,C) -> (R,1)
  Mean,
  Abs,
  Square,
  Sqrt,
  Log,
  Exp,
  Tanh,
  LeakyRelu,
  ClampMin,
  ConcatCols,
  RowSlice,
  BroadcastRow,  // (1,C) -> (n,C)
  BroadcastCol,  // (R,1) -> (R,n)
  RowNormalize,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::ScalarMul: return "scalar-mul";
    case Op::AddScalar: return "add-scalar";
    case Op::Matmul: return "matmul";
    case Op::Sum: return "sum";
    case Op::SumOverRows: return "sum-over-rows";
    case Op::SumOverCols: return "sum-over-cols";
    case Op::Mean: return "mean";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Tanh: return "tanh";
    case Op::LeakyRelu: return "leaky-relu";
    case Op::ClampMin: return "clamp-min";
    case Op::ConcatCols: return "concat-columns";
    case Op::RowSlice: return "row-slice";
    case Op::BroadcastRow: return "broadcast-row";
    case Op::BroadcastCol: return "broadcast-col";
    case Op::RowNormalize: return "row-normalize";
  }
  return "?";
}

class Tape;

// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  double item() const { return value().item(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records `t`. Gradients flow back into t.grad() iff t.requires_grad().
  Var leaf(Tensor& t) {
    Node n;
    n.op = Op::Leaf;
    n.value = t;
    n.value.clear_grad();
    n.needs_grad = t.requires_grad();
    n.external = t.requires_grad() ? &t : nullptr;
    return push(std::move(n));
  }

  // Records a value that never receives gradients (frozen parameters, data).
  Var constant(Tensor t) {
    Node n;
    n.op = Op::Constant;
    t.clear_grad();
    n.value = std::move(t);
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  Op op(Var v) const { return nodes_.at(v.id()).op; }
  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Populates grads of every reachable leaf. Calling twice accumulates.
  void backward(Var root) {
    if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    const Tensor& rv = value(root);
    if (!rv.is_scalar()) {
      throw ShapeError("backward: root must be scalar, got " + rv.shape_string());
    }
    if (!nodes_[root.id()].needs_grad) return;

    std::vector<std::vector<double>> grads(root.id() + 1);
    grads[root.id()] = {1.0};
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || grads[i].empty()) continue;
      propagate(n, grads[i], grads);
      if (n.op == Op::Leaf && n.external != nullptr) {
        auto& g = n.external->grad();
        if (g.empty()) g.assign(n.external->size(), 0.0);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += grads[i][k];
      }
      if (n.op != Op::Leaf) grads[i].clear();
    }
  }

  // Primitive constructors; see free functions below for the public spelling.
  Var unary(Op op, Var a, double scalar = 0.0);
  Var binary(Op op, Var a, Var b);
  Var matmul(Var a, Var b);
  Var reduce(Op op, Var a);
  Var concat_cols(Var a, Var b);
  Var row_slice(Var a, std::size_t begin, std::size_t end);
  Var broadcast(Op op, Var a, std::size_t n);

 private:
  struct Node {
    Op op = Op::Constant;
    std::array<std::size_t, 2> in{0, 0};
    int n_in = 0;
    Tensor value;
    bool needs_grad = false;
    double scalar = 0.0;
    std::size_t aux = 0;
    Tensor* external = nullptr;
    // RowNormalize caches row norms.
    std::vector<double> cache;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }
  const Node& node(Var v) const {
    if (v.tape() != this) throw std::invalid_argument("Var belongs to another tape");
    return nodes_[v.id()];
  }

  std::vector<double>& grad_slot(std::vector<std::vector<double>>& grads, std::size_t id) {
    if (grads[id].empty()) grads[id].assign(nodes_[id].value.size(), 0.0);
    return grads[id];
  }

  void propagate(const Node& n, const std::vector<double>& g,
                 std::vector<std::vector<double>>& grads);

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace detail {

[[noreturn]] inline void shape_mismatch(Op op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.shape_string() +
                   " and " + b.shape_string());
}

inline void matmul_into(const double* a, const double* b, double* c, std::size_t n,
                        std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace detail

inline Var Tape::unary(Op op, Var a, double scalar) {
  const Node& na = node(a);
  const Tensor& x = na.value;
  Node n;
  n.op = op;
  n.in = {a.id(), 0};
  n.n_in = 1;
  n.scalar = scalar;
  n.needs_grad = na.needs_grad;
  Tensor y(x.rows(), x.cols());
  const std::size_t sz = x.size();
  switch (op) {
    case Op::ScalarMul:
      for (std::size_t i = 0; i < sz; ++i) y[i] = scalar * x[i];
      break;
    case Op::AddScalar:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] + scalar;
      break;
    case Op::Abs:
      for (std::size_t i = 0; i < sz; ++i) y[i] = std::abs(x[i]);
      break;
    case Op::Square:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] * x[i];
      break;
    case Op::Sqrt:
    case Op::Log:
      for (std::size_t i = 0; i < sz; ++i) {
        if (!(x[i] > 0.0)) {
          std::ostringstream os;
          os << op_name(op) << ": non-positive input " << x[i] << " at flat index " << i;
          throw DomainError(os.str());
        }
        y[i] = op == Op::Sqrt ? std::sqrt(x[i]) : std::log(x[i]);
      }
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < sz; ++i) y[i] = std::exp(x[i]);
      break;
    case Op::Tanh:
      for (std::size_t i = 0; i < sz; ++i) y[i] = std::tanh(x[i]);
      break;
    case Op::LeakyRelu:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] > 0.0 ? x[i] : scalar * x[i];
      break;
    case Op::ClampMin:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] > scalar ? x[i] : scalar;
      break;
    case Op::RowNormalize: {
      n.cache.resize(x.rows());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) ss += x(r, c) * x(r, c);
        const double norm = std::sqrt(ss);
        if (!(norm >= 1e-12)) {
          throw GeometryError("project_to_sphere: row " + std::to_string(r) +
                              " has norm below 1e-12");
        }
        n.cache[r] = norm;
        for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) / norm;
      }
      break;
    }
    default:
      throw std::logic_error(std::string("unary: not a unary op: ") + op_name(op));
  }
  n.value = std::move(y);
  return push(std::move(n));
}

inline Var Tape::binary(Op op, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  const Tensor& x = na.value;
  const Tensor& z = nb.value;
  if (x.shape() != z.shape()) detail::shape_mismatch(op, x, z);
  Node n;
  n.op = op;
  n.in = {a.id(), b.id()};
  n.n_in = 2;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  Tensor y(x.rows(), x.cols());
  const std::size_t sz = x.size();
  switch (op) {
    case Op::Add:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] + z[i];
      break;
    case Op::Sub:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] - z[i];
      break;
    case Op::Mul:
      for (std::size_t i = 0; i < sz; ++i) y[i] = x[i] * z[i];
      break;
    case Op::Div:
      for (std::size_t i = 0; i < sz; ++i) {
        if (z[i] == 0.0) throw DomainError("div: zero divisor at flat index " + std::to_string(i));
        y[i] = x[i] / z[i];
      }
      break;
    default:
      throw std::logic_error(std::string("binary: not a binary op: ") + op_name(op));
  }
  n.value = std::move(y);
  return push(std::move(n));
}

inline Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  const Tensor& x = na.value;
  const Tensor& z = nb.value;
  if (x.cols() != z.rows()) detail::shape_mismatch(Op::Matmul, x, z);
  Node n;
  n.op = Op::Matmul;
  n.in = {a.id(), b.id()};
  n.n_in = 2;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  Tensor y(x.rows(), z.cols());
  detail::matmul_into(x.data().data(), z.data().data(), y.data().data(), x.rows(), x.cols(),
                      z.cols());
  n.value = std::move(y);
  return push(std::move(n));
}

inline Var Tape::reduce(Op op, Var a) {
  const Node& na = node(a);
  const Tensor& x = na.value;
  Node n;
  n.op = op;
  n.in = {a.id(), 0};
  n.n_in = 1;
  n.needs_grad = na.needs_grad;
  switch (op) {
    case Op::Sum:
    case Op::Mean: {
      double s = 0.0;
      for (double v : x.data()) s += v;
      if (op == Op::Mean) s /= static_cast<double>(x.size());
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::SumOverRows: {
      Tensor y(1, x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) y[c] += x(r, c);
      n.value = std::move(y);
      break;
    }
    case Op::SumOverCols: {
      Tensor y(x.rows(), 1);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) y[r] += x(r, c);
      n.value = std::move(y);
      break;
    }
    default:
      throw std::logic_error(std::string("reduce: not a reduction: ") + op_name(op));
  }
  return push(std::move(n));
}

inline Var Tape::concat_cols(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  const Tensor& x = na.value;
  const Tensor& z = nb.value;
  if (x.rows() != z.rows()) detail::shape_mismatch(Op::ConcatCols, x, z);
  Node n;
  n.op = Op::ConcatCols;
  n.in = {a.id(), b.id()};
  n.n_in = 2;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  Tensor y(x.rows(), x.cols() + z.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c);
    for (std::size_t c = 0; c < z.cols(); ++c) y(r, x.cols() + c) = z(r, c);
  }
  n.value = std::move(y);
  return push(std::move(n));
}

inline Var Tape::row_slice(Var a, std::size_t begin, std::size_t end) {
  const Node& na = node(a);
  const Tensor& x = na.value;
  if (begin >= end || end > x.rows()) {
    throw ShapeError("row-slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + x.shape_string());
  }
  Node n;
  n.op = Op::RowSlice;
  n.in = {a.id(), 0};
  n.n_in = 1;
  n.aux = begin;
  n.needs_grad = na.needs_grad;
  std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
                           x.data().begin() + static_cast<std::ptrdiff_t>(end * x.cols()));
  n.value = Tensor(end - begin, x.cols(), std::move(data));
  return push(std::move(n));
}

inline Var Tape::broadcast(Op op, Var a, std::size_t count) {
  const Node& na = node(a);
  const Tensor& x = na.value;
  Node n;
  n.op = op;
  n.in = {a.id(), 0};
  n.n_in = 1;
  n.needs_grad = na.needs_grad;
  if (op == Op::BroadcastRow) {
    if (x.rows() != 1) throw ShapeError("broadcast-row: expected (1,C), got " + x.shape_string());
    Tensor y(count, x.cols());
    for (std::size_t r = 0; r < count; ++r)
      std::copy(x.data().begin(), x.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(r * x.cols()));
    n.value = std::move(y);
  } else if (op == Op::BroadcastCol) {
    if (x.cols() != 1) throw ShapeError("broadcast-col: expected (R,1), got " + x.shape_string());
    Tensor y(x.rows(), count);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) y(r, c) = x[r];
    n.value = std::move(y);
  } else {
    throw std::logic_error(std::string("broadcast: not a broadcast: ") + op_name(op));
  }
  return push(std::move(n));
}

inline void Tape::propagate(const Node& n, const std::vector<double>& g,
                            std::vector<std::vector<double>>& grads) {
  const auto wants = [&](int k) { return nodes_[n.in[static_cast<std::size_t>(k)]].needs_grad; };
  const Tensor& y = n.value;
  const std::size_t sz = y.size();
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Add:
    case Op::Sub: {
      if (wants(0)) {
        auto& ga = grad_slot(grads, n.in[0]);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_slot(grads, n.in[1]);
        const double sign = n.op == Op::Add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < sz; ++i) gb[i] += sign * g[i];
      }
      return;
    }
    case Op::Mul: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (wants(0)) {
        auto& ga = grad_slot(grads, n.in[0]);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& gb = grad_slot(grads, n.in[1]);
        for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i] * a[i];
      }
      return;
    }
    case Op::Div: {
      const Tensor& b = nodes_[n.in[1]].value;
      if (wants(0)) {
        auto& ga = grad_slot(grads, n.in[0]);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] / b[i];
      }
      if (wants(1)) {
        auto& gb = grad_slot(grads, n.in[1]);
        for (std::size_t i = 0; i < sz; ++i) gb[i] -= g[i] * y[i] / b[i];
      }
      return;
    }
    case Op::Matmul: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
      if (wants(0)) {
        // dA = G * B^T
        auto& ga = grad_slot(grads, n.in[0]);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* gi = g.data() + i * cols;
          for (std::size_t p = 0; p < inner; ++p) {
            const double* bp = b.data().data() + p * cols;
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += gi[j] * bp[j];
            ga[i * inner + p] += s;
          }
        }
      }
      if (wants(1)) {
        // dB = A^T * G
        auto& gb = grad_slot(grads, n.in[1]);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* gi = g.data() + i * cols;
          for (std::size_t p = 0; p < inner; ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            double* gbp = gb.data() + p * cols;
            for (std::size_t j = 0; j < cols; ++j) gbp[j] += aip * gi[j];
          }
        }
      }
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      auto& ga = grad_slot(grads, n.in[0]);
      const double scale =
          n.op == Op::Mean ? g[0] / static_cast<double>(ga.size()) : g[0];
      for (double& v : ga) v += scale;
      return;
    }
    case Op::SumOverRows: {
      auto& ga = grad_slot(grads, n.in[0]);
      const std::size_t cols = y.cols();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i % cols];
      return;
    }
    case Op::SumOverCols: {
      auto& ga = grad_slot(grads, n.in[0]);
      const std::size_t cols = nodes_[n.in[0]].value.cols();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / cols];
      return;
    }
    case Op::ScalarMul: {
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += n.scalar * g[i];
      return;
    }
    case Op::AddScalar: {
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      return;
    }
    case Op::Abs: {
      const Tensor& a = nodes_[n.in[0]].value;
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i)
        ga[i] += a[i] > 0.0 ? g[i] : (a[i] < 0.0 ? -g[i] : 0.0);
      return;
    }
    case Op::Square: {
      const Tensor& a = nodes_[n.in[0]].value;
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += 2.0 * a[i] * g[i];
      return;
    }
    case Op::Sqrt: {
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * 0.5 / y[i];
      return;
    }
    case Op::Log: {
      const Tensor& a = nodes_[n.in[0]].value;
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] / a[i];
      return;
    }
    case Op::Exp: {
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * y[i];
      return;
    }
    case Op::Tanh: {
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::LeakyRelu: {
      const Tensor& a = nodes_[n.in[0]].value;
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i) ga[i] += a[i] > 0.0 ? g[i] : n.scalar * g[i];
      return;
    }
    case Op::ClampMin: {
      const Tensor& a = nodes_[n.in[0]].value;
      auto& ga = grad_slot(grads, n.in[0]);
      for (std::size_t i = 0; i < sz; ++i)
        if (a[i] > n.scalar) ga[i] += g[i];
      return;
    }
    case Op::ConcatCols: {
      const std::size_t ca = nodes_[n.in[0]].value.cols();
      const std::size_t cols = y.cols();
      if (wants(0)) {
        auto& ga = grad_slot(grads, n.in[0]);
        for (std::size_t r = 0; r < y.rows(); ++r)
          for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * cols + c];
      }
      if (wants(1)) {
        auto& gb = grad_slot(grads, n.in[1]);
        const std::size_t cb = cols - ca;
        for (std::size_t r = 0; r < y.rows(); ++r)
          for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * cols + ca + c];
      }
      return;
    }
    case Op::RowSlice: {
      auto& ga = grad_slot(grads, n.in[0]);
      const std::size_t offset = n.aux * y.cols();
      for (std::size_t i = 0; i < sz; ++i) ga[offset + i] += g[i];
      return;
    }
    case Op::BroadcastRow: {
      auto& ga = grad_slot(grads, n.in[0]);
      const std::size_t cols = y.cols();
      for (std::size_t i = 0; i < sz; ++i) ga[i % cols] += g[i];
      return;
    }
    case Op::BroadcastCol: {
      auto& ga = grad_slot(grads, n.in[0]);
      const std::size_t cols = y.cols();
      for (std::size_t i = 0; i < sz; ++i) ga[i / cols] += g[i];
      return;
    }
    case Op::RowNormalize: {
      // y = x/|x|;  dx = (g - y (g.y)) / |x|
      auto& ga = grad_slot(grads, n.in[0]);
      const std::size_t cols = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y(r, c);
        const double inv = 1.0 / n.cache[r];
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += (g[r * cols + c] - y(r, c) * dot) * inv;
      }
      return;
    }
  }
}

// ---- public spelling of the primitives ----

namespace detail {
inline Tape& same_tape(Var a, Var b, Op op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op_name(op)) + ": operands live on different tapes");
  }
  return *a.tape();
}
}  // namespace detail

inline Var add(Var a, Var b) { return detail::same_tape(a, b, Op::Add).binary(Op::Add, a, b); }
inline Var sub(Var a, Var b) { return detail::same_tape(a, b, Op::Sub).binary(Op::Sub, a, b); }
inline Var mul(Var a, Var b) { return detail::same_tape(a, b, Op::Mul).binary(Op::Mul, a, b); }
inline Var div(Var a, Var b) { return detail::same_tape(a, b, Op::Div).binary(Op::Div, a, b); }
inline Var matmul(Var a, Var b) {
  return detail::same_tape(a, b, Op::Matmul).matmul(a, b);
}
inline Var concat_cols(Var a, Var b) {
  return detail::same_tape(a, b, Op::ConcatCols).concat_cols(a, b);
}
inline Var scale(Var a, double s) { return a.tape()->unary(Op::ScalarMul, a, s); }
inline Var add_scalar(Var a, double s) { return a.tape()->unary(Op::AddScalar, a, s); }
inline Var sum(Var a) { return a.tape()->reduce(Op::Sum, a); }
inline Var mean(Var a) { return a.tape()->reduce(Op::Mean, a); }
inline Var sum_over_rows(Var a) { return a.tape()->reduce(Op::SumOverRows, a); }
inline Var sum_over_cols(Var a) { return a.tape()->reduce(Op::SumOverCols, a); }
inline Var abs(Var a) { return a.tape()->unary(Op::Abs, a); }
inline Var square(Var a) { return a.tape()->unary(Op::Square, a); }
inline Var sqrt(Var a) { return a.tape()->unary(Op::Sqrt, a); }
inline Var log(Var a) { return a.tape()->unary(Op::Log, a); }
inline Var exp(Var a) { return a.tape()->unary(Op::Exp, a); }
inline Var tanh(Var a) { return a.tape()->unary(Op::Tanh, a); }
inline Var leaky_relu(Var a, double slope) { return a.tape()->unary(Op::LeakyRelu, a, slope); }
inline Var clamp_min(Var a, double lo) { return a.tape()->unary(Op::ClampMin, a, lo); }
inline Var row_normalize(Var a) { return a.tape()->unary(Op::RowNormalize, a); }
inline Var row_slice(Var a, std::size_t begin, std::size_t end) {
  return a.tape()->row_slice(a, begin, end);
}
inline Var broadcast_row(Var a, std::size_t n) { return a.tape()->broadcast(Op::BroadcastRow, a, n); }
inline Var broadcast_col(Var a, std::size_t n) { return a.tape()->broadcast(Op::BroadcastCol, a, n); }

// Column means, (R,C) -> (1,C).
inline Var mean_over_rows(Var a) {
  return scale(sum_over_rows(a), 1.0 / static_cast<double>(a.rows()));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// ---- ADAM ----

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Bias-corrected ADAM update. Gradients are read, not cleared.
inline void adam_step(std::span<Tensor* const> params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->has_grad()) {
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->size(), 0.0);
      state.second_moment.emplace_back(p->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter list changed between steps");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.size()) throw std::invalid_argument("adam_step: moment size mismatch");
    const auto& g = p.grad();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace age::nd
