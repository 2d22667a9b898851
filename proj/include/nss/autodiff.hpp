// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over a closed set of dense primitives.
//
// Every array is a column-batched matrix: rows are channels, columns are
// independent batch items. Two graph back-ends share one set of kernels:
//
//   Tape<S>   records each node and its inputs so backward() can run.
//   Eager<S>  evaluates immediately and keeps nothing.
//
// Layer code is written once against either back-end (see nets.hpp). Because
// the kernels treat columns independently and in a fixed arithmetic order, a
// batch of B items is bit-identical to B single-item evaluations, and the two
// back-ends agree bit-for-bit.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nss/error.hpp"
#include "nss/param_store.hpp"
#include "nss/types.hpp"

namespace nss {

namespace kernels {

template <typename S>
Matrix<S> affine(const Matrix<S>& weight, const Matrix<S>* bias, const Matrix<S>& x) {
  Matrix<S> out(weight.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    auto o = out.col(j);
    if (bias != nullptr) {
      o = bias->col(0);
    } else {
      o.setZero();
    }
    for (Index k = 0; k < weight.cols(); ++k) o += weight.col(k) * x(k, j);
  }
  return out;
}

template <typename S>
Matrix<S> tanh(const Matrix<S>& x) {
  return x.unaryExpr([](S v) { return std::tanh(v); });
}

template <typename S>
Matrix<S> sigmoid(const Matrix<S>& x) {
  return x.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
}

template <typename S>
Matrix<S> concat(std::span<const Matrix<S>* const> parts) {
  Index rows = 0;
  for (const auto* p : parts) rows += p->rows();
  Matrix<S> out(rows, parts.front()->cols());
  Index r = 0;
  for (const auto* p : parts) {
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

template <typename S>
S sum_squares(const Matrix<S>& x) {
  S acc = 0;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) acc += x(i, j) * x(i, j);
  }
  return acc;
}

}  // namespace kernels

namespace detail {

inline std::string shape_str(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

template <typename S>
std::string shape_str(const Matrix<S>& m) {
  return shape_str(m.rows(), m.cols());
}

// Shape rules shared by both back-ends; `who` names the node being built.
template <typename S>
void check_affine(const Matrix<S>& w, const Matrix<S>* b, const Matrix<S>& x, const std::string& who) {
  if (w.cols() != x.rows()) {
    throw DimensionError(who + ": weight is " + shape_str(w) + " but input is " + shape_str(x));
  }
  if (b != nullptr && (b->rows() != w.rows() || b->cols() != 1)) {
    throw DimensionError(who + ": bias is " + shape_str(*b) + ", expected " + shape_str(w.rows(), 1));
  }
}

template <typename S>
void check_same(const Matrix<S>& a, const Matrix<S>& b, const std::string& who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(who + ": operands are " + shape_str(a) + " and " + shape_str(b));
  }
}

template <typename S>
void check_concat(std::span<const Matrix<S>* const> parts, const std::string& who) {
  if (parts.empty()) throw ContractError(who + ": nothing to concatenate");
  for (const auto* p : parts) {
    if (p->cols() != parts.front()->cols()) {
      throw DimensionError(who + ": column counts differ (" + shape_str(*parts.front()) + " vs " + shape_str(*p) +
                           ")");
    }
  }
}

template <typename S>
void check_slice(const Matrix<S>& x, Index row, Index rows, const std::string& who) {
  if (row < 0 || rows < 1 || row + rows > x.rows()) {
    throw DimensionError(who + ": rows [" + std::to_string(row) + ", " + std::to_string(row + rows) +
                         ") out of range for " + shape_str(x));
  }
}

}  // namespace detail

/// Primitive set of the tape. Closed: layers compose these.
enum class Op { constant, param, affine, linear, tanh, sigmoid, add, mul, concat, slice, sum_squares };

inline std::string_view to_string(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::param: return "param";
    case Op::affine: return "affine";
    case Op::linear: return "linear";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::sum_squares: return "sum_squares";
  }
  return "?";
}

struct NodeId {
  std::size_t index = 0;
};

/// Recording graph for one evaluation. Build, call backward() once, read gradients().
///
/// A tape binds to at most one ParamStore (the first one passed to param());
/// gradients() is laid out like that store.
template <typename S>
class Tape {
 public:
  using Scalar = S;
  using Handle = NodeId;
  using MatrixType = Matrix<S>;

  NodeId constant(MatrixType value) { return push(Op::constant, {}, std::move(value), false); }

  /// Leaf for a named parameter. Repeated calls with the same name return the same node.
  NodeId param(const ParamStore<S>& store, std::string_view name) {
    if (store_ == nullptr) {
      store_ = &store;
    } else if (store_ != &store) {
      throw ContractError("tape is already bound to a different parameter store");
    }
    const std::size_t pos = store.position(name);
    if (auto it = param_nodes_.find(pos); it != param_nodes_.end()) return NodeId{it->second};
    NodeId id = push(Op::param, {}, store.entries()[pos].value, true);
    nodes_[id.index].aux = static_cast<Index>(pos);
    param_nodes_.emplace(pos, id.index);
    return id;
  }

  NodeId affine(NodeId w, NodeId b, NodeId x) {
    const auto& W = value(w);
    const auto& B = value(b);
    const auto& X = value(x);
    detail::check_affine(W, &B, X, next_name(Op::affine));
    return push(Op::affine, {w.index, b.index, x.index}, kernels::affine(W, &B, X));
  }

  /// Affine map without bias.
  NodeId linear(NodeId w, NodeId x) {
    const auto& W = value(w);
    const auto& X = value(x);
    detail::check_affine<S>(W, nullptr, X, next_name(Op::linear));
    return push(Op::linear, {w.index, x.index}, kernels::affine<S>(W, nullptr, X));
  }

  NodeId tanh(NodeId x) { return push(Op::tanh, {x.index}, kernels::tanh(value(x))); }
  NodeId sigmoid(NodeId x) { return push(Op::sigmoid, {x.index}, kernels::sigmoid(value(x))); }

  NodeId add(NodeId a, NodeId b) {
    detail::check_same(value(a), value(b), next_name(Op::add));
    return push(Op::add, {a.index, b.index}, value(a) + value(b));
  }

  NodeId mul(NodeId a, NodeId b) {
    detail::check_same(value(a), value(b), next_name(Op::mul));
    return push(Op::mul, {a.index, b.index}, value(a).cwiseProduct(value(b)));
  }

  NodeId concat(std::initializer_list<NodeId> parts) { return concat(std::span<const NodeId>(parts.begin(), parts.size())); }

  /// Stacks row-wise.
  NodeId concat(std::span<const NodeId> parts) {
    std::vector<const MatrixType*> ptrs;
    std::vector<std::size_t> in;
    ptrs.reserve(parts.size());
    in.reserve(parts.size());
    for (auto p : parts) {
      ptrs.push_back(&value(p));
      in.push_back(p.index);
    }
    detail::check_concat<S>(ptrs, next_name(Op::concat));
    return push(Op::concat, std::move(in), kernels::concat<S>(ptrs));
  }

  NodeId slice(NodeId x, Index row, Index rows) {
    detail::check_slice(value(x), row, rows, next_name(Op::slice));
    NodeId id = push(Op::slice, {x.index}, value(x).middleRows(row, rows));
    nodes_[id.index].aux = row;
    return id;
  }

  /// scale * sum of squared entries, as a 1x1 array.
  NodeId sum_squares(NodeId x, S scale = S(1)) {
    MatrixType v(1, 1);
    v(0, 0) = scale * kernels::sum_squares(value(x));
    NodeId id = push(Op::sum_squares, {x.index}, std::move(v));
    nodes_[id.index].scale = scale;
    return id;
  }

  const MatrixType& value(NodeId id) const { return node(id).value; }

  /// Valid after backward(); empty for nodes the output does not depend on.
  const MatrixType& adjoint(NodeId id) const {
    node(id);
    static const MatrixType empty;
    return id.index < adjoints_.size() ? adjoints_[id.index] : empty;
  }

  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return node(id).op; }
  const ParamStore<S>* bound_store() const { return store_; }

  std::string describe(NodeId id) const {
    const auto& n = node(id);
    std::string s = "node " + std::to_string(id.index) + " (" + std::string(to_string(n.op));
    if (n.op == Op::param && store_ != nullptr) s += " '" + store_->entries()[static_cast<std::size_t>(n.aux)].name + "'";
    return s + ")";
  }

  /// Propagates `seed` * d(out)/d(node) to every node. `out` must be 1x1.
  void backward(NodeId out, S seed = S(1)) {
    const auto& ov = value(out);
    if (ov.rows() != 1 || ov.cols() != 1) {
      throw ContractError("backward: " + describe(out) + " is " + detail::shape_str(ov) + ", expected a scalar");
    }
    adjoints_.assign(nodes_.size(), MatrixType());
    adjoints_[out.index] = MatrixType::Constant(1, 1, seed);
    for (std::size_t i = out.index + 1; i-- > 0;) {
      const MatrixType& g = adjoints_[i];
      if (g.size() == 0 || !nodes_[i].needs_grad) continue;
      propagate(i, g);
    }
    for (const auto& [pos, idx] : param_nodes_) {
      if (adjoints_[idx].size() == 0) adjoints_[idx] = MatrixType::Zero(nodes_[idx].value.rows(), nodes_[idx].value.cols());
    }
  }

  /// Parameter adjoints laid out like the bound store; unused entries are exactly zero.
  ParamStore<S> gradients() const {
    if (store_ == nullptr) return {};
    ParamStore<S> grads = store_->zeros_like();
    for (const auto& [pos, idx] : param_nodes_) {
      if (idx < adjoints_.size() && adjoints_[idx].size() != 0) grads.entries()[pos].value = adjoints_[idx];
    }
    return grads;
  }

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    MatrixType value;
    bool needs_grad = false;
    Index aux = 0;  // slice row offset or parameter position
    S scale = S(1);
  };

  const Node& node(NodeId id) const {
    if (id.index >= nodes_.size()) throw ContractError("node " + std::to_string(id.index) + " is not on this tape");
    return nodes_[id.index];
  }

  std::string next_name(Op op) const { return "node " + std::to_string(nodes_.size()) + " (" + std::string(to_string(op)) + ")"; }

  NodeId push(Op op, std::vector<std::size_t> inputs, MatrixType value, bool leaf_grad = false) {
    bool needs = leaf_grad;
    for (auto in : inputs) needs = needs || nodes_[in].needs_grad;
    if (!value.allFinite()) throw NumericalError("non-finite value at " + next_name(op));
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), needs});
    return NodeId{nodes_.size() - 1};
  }

  MatrixType& accum(std::size_t idx) {
    MatrixType& a = adjoints_[idx];
    if (a.size() == 0) a = MatrixType::Zero(nodes_[idx].value.rows(), nodes_[idx].value.cols());
    return a;
  }

  bool wants(std::size_t idx) const { return nodes_[idx].needs_grad; }

  void propagate(std::size_t i, const MatrixType& g) {
    const Node& n = nodes_[i];
    const auto& in = n.inputs;
    switch (n.op) {
      case Op::constant:
      case Op::param:
        break;
      case Op::affine:
      case Op::linear: {
        const std::size_t w = in[0];
        const std::size_t x = n.op == Op::affine ? in[2] : in[1];
        if (wants(w)) accum(w).noalias() += g * nodes_[x].value.transpose();
        if (n.op == Op::affine && wants(in[1])) accum(in[1]) += g.rowwise().sum();
        if (wants(x)) accum(x).noalias() += nodes_[w].value.transpose() * g;
        break;
      }
      case Op::tanh:
        if (wants(in[0])) accum(in[0]).array() += g.array() * (S(1) - n.value.array().square());
        break;
      case Op::sigmoid:
        if (wants(in[0])) accum(in[0]).array() += g.array() * n.value.array() * (S(1) - n.value.array());
        break;
      case Op::add:
        if (wants(in[0])) accum(in[0]) += g;
        if (wants(in[1])) accum(in[1]) += g;
        break;
      case Op::mul:
        if (wants(in[0])) accum(in[0]).array() += g.array() * nodes_[in[1]].value.array();
        if (wants(in[1])) accum(in[1]).array() += g.array() * nodes_[in[0]].value.array();
        break;
      case Op::concat: {
        Index r = 0;
        for (auto p : in) {
          const Index rows = nodes_[p].value.rows();
          if (wants(p)) accum(p) += g.middleRows(r, rows);
          r += rows;
        }
        break;
      }
      case Op::slice:
        if (wants(in[0])) accum(in[0]).middleRows(n.aux, n.value.rows()) += g;
        break;
      case Op::sum_squares:
        if (wants(in[0])) accum(in[0]) += (S(2) * n.scale * g(0, 0)) * nodes_[in[0]].value;
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<MatrixType> adjoints_;
  const ParamStore<S>* store_ = nullptr;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

/// Immediate evaluation with the same kernels as Tape and nothing recorded.
template <typename S>
class Eager {
 public:
  using Scalar = S;
  using MatrixType = Matrix<S>;
  using Handle = MatrixType;

  Handle constant(MatrixType value) const { return value; }
  Handle param(const ParamStore<S>& store, std::string_view name) const { return store[name]; }

  Handle affine(const Handle& w, const Handle& b, const Handle& x) const {
    detail::check_affine(w, &b, x, "affine");
    return kernels::affine(w, &b, x);
  }
  Handle linear(const Handle& w, const Handle& x) const {
    detail::check_affine<S>(w, nullptr, x, "linear");
    return kernels::affine<S>(w, nullptr, x);
  }
  Handle tanh(const Handle& x) const { return kernels::tanh(x); }
  Handle sigmoid(const Handle& x) const { return kernels::sigmoid(x); }
  Handle add(const Handle& a, const Handle& b) const {
    detail::check_same(a, b, "add");
    return a + b;
  }
  Handle mul(const Handle& a, const Handle& b) const {
    detail::check_same(a, b, "mul");
    return a.cwiseProduct(b);
  }
  Handle concat(std::initializer_list<Handle> parts) const {
    std::vector<const MatrixType*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    detail::check_concat<S>(ptrs, "concat");
    return kernels::concat<S>(ptrs);
  }
  Handle concat(std::span<const Handle> parts) const {
    std::vector<const MatrixType*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    detail::check_concat<S>(ptrs, "concat");
    return kernels::concat<S>(ptrs);
  }
  Handle slice(const Handle& x, Index row, Index rows) const {
    detail::check_slice(x, row, rows, "slice");
    return x.middleRows(row, rows);
  }
  Handle sum_squares(const Handle& x, S scale = S(1)) const {
    Handle v(1, 1);
    v(0, 0) = scale * kernels::sum_squares(x);
    return v;
  }
  const MatrixType& value(const Handle& h) const { return h; }
};

/// Runs the tape backwards from `out` and returns the parameter adjoints.
template <typename S>
ParamStore<S> backward(Tape<S>& tape, NodeId out, S seed = S(1)) {
  tape.backward(out, seed);
  return tape.gradients();
}

template <typename S>
struct GradCheckReport {
  S max_rel_error = 0;
  bool pass = true;
  std::string worst_param;
  Index worst_index = -1;
  Index entries_checked = 0;
};

/// Scalar value of a tape-building function at the given parameters.
template <typename S, class Build>
S evaluate_scalar(Build&& build, const ParamStore<S>& params) {
  Tape<S> tape;
  NodeId out = build(tape, params);
  const auto& v = tape.value(out);
  if (v.size() != 1) throw ContractError("evaluate_scalar: output is not scalar");
  return v(0, 0);
}

/// Compares `analytic` against central differences of `build` at `params`.
/// Relative error per entry is |a - b| / max(|a|, |b|, 1e-12).
template <typename S, class Build>
GradCheckReport<S> compare_gradients(Build&& build, const ParamStore<S>& params, const ParamStore<S>& analytic,
                                     S fd_step, S tolerance) {
  if (!(fd_step > 0) || !(tolerance > 0)) throw ContractError("grad_check: fd_step and tolerance must be positive");
  GradCheckReport<S> report;
  ParamStore<S> probe = params;
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& slot = probe.entries()[e].value;
    const auto& grad = analytic.entries()[e].value;
    for (Index k = 0; k < slot.size(); ++k) {
      const S orig = slot.reshaped()(k);
      slot.reshaped()(k) = orig + fd_step;
      const S up = evaluate_scalar(build, probe);
      slot.reshaped()(k) = orig - fd_step;
      const S down = evaluate_scalar(build, probe);
      slot.reshaped()(k) = orig;
      const S fd = (up - down) / (S(2) * fd_step);
      const S a = grad.reshaped()(k);
      if (!std::isfinite(a)) {
        throw NumericalError("grad_check: non-finite adjoint for '" + params.entries()[e].name + "'[" +
                             std::to_string(k) + "]");
      }
      const S denom = std::max({std::abs(a), std::abs(fd), S(1e-12)});
      const S rel = std::abs(a - fd) / denom;
      ++report.entries_checked;
      if (report.worst_index < 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = params.entries()[e].name;
        report.worst_index = k;
      }
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

/// Backward adjoints of `build` checked against central finite differences.
template <typename S, class Build>
GradCheckReport<S> grad_check(Build&& build, const ParamStore<S>& params, S fd_step, S tolerance) {
  Tape<S> tape;
  NodeId out = build(tape, params);
  ParamStore<S> analytic = backward(tape, out);
  return compare_gradients(build, params, analytic, fd_step, tolerance);
}

}  // namespace nss
