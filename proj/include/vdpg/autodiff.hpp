#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vdpg/tensor.hpp"

namespace vdpg {

// Reverse-mode autodiff over a fixed primitive set: matmul, add, mul (both
// broadcasting row/column/scalar operands), scale, transpose, concat, slice,
// sum/mean over an axis or all, exp, log, sqrt, square, softmax_rows.
// Forward is eager; backward replays the tape in reverse. Nodes are recorded
// in topological order by construction.

struct Var {
  static constexpr std::uint32_t kInvalid = 0xffffffffu;
  std::uint32_t idx = kInvalid;
  bool valid() const { return idx != kInvalid; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kMul,
  kScale,
  kTranspose,
  kConcatRows,
  kConcatCols,
  kSlice,
  kSumAll,
  kMeanAll,
  kRowSum,   // [m x n] -> [m x 1]
  kRowMean,  // [m x n] -> [m x 1]
  kColSum,   // [m x n] -> [1 x n]
  kColMean,  // [m x n] -> [1 x n]
  kExp,
  kLog,
  kSqrt,
  kSquare,
  kSoftmaxRows,
};

class Tape;

// Backward result: adjoints per node, queried through leaf handles.
class Gradients {
 public:
  const Tensor& grad(Var v) const;

 private:
  friend class Tape;
  mutable std::vector<Tensor> adj_;
  const Tape* tape_ = nullptr;
};

class Tape {
 public:
  explicit Tape(bool strict = true) : strict_(strict) {}

  bool strict() const { return strict_; }
  void set_strict(bool s) { strict_ = s; }
  std::size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    parents_.clear();
  }

  Var leaf(Tensor v, bool trainable = false) {
    if (v.empty()) throw ShapeError("leaf: empty tensor");
    return push(Op::kLeaf, std::move(v), {}, 0.0, trainable);
  }

  Var constant(Tensor v) { return leaf(std::move(v), false); }
  Var constant(double c) { return leaf(Tensor::scalar(c), false); }

  const Tensor& value(Var v) const { return node(v).val; }
  bool trainable(Var v) const { return node(v).trainable; }
  bool is_leaf(Var v) const { return node(v).op == Op::kLeaf; }

  Var matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.cols() != tb.rows())
      throw ShapeError("matmul: inner dimensions differ, " + ta.shape_str() +
                       " x " + tb.shape_str());
    return push(Op::kMatMul, vdpg::matmul(ta, tb), {a.idx, b.idx});
  }

  Var add(Var a, Var b) { return binary_broadcast(Op::kAdd, a, b); }
  Var mul(Var a, Var b) { return binary_broadcast(Op::kMul, a, b); }

  Var scale(Var a, double c) {
    return push(Op::kScale, vdpg::scale(value(a), c), {a.idx}, c);
  }

  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
  Var neg(Var a) { return scale(a, -1.0); }
  Var add_scalar(Var a, double c) { return add(a, constant(c)); }

  Var transpose(Var a) {
    return push(Op::kTranspose, vdpg::transpose(value(a)), {a.idx});
  }

  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    const std::size_t cols = value(parts[0]).cols();
    std::size_t rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols)
        throw ShapeError("concat_rows: column mismatch, " +
                         value(parts[0]).shape_str() + " vs " +
                         value(p).shape_str());
      rows += value(p).rows();
    }
    Tensor out(rows, cols);
    std::size_t r = 0;
    std::vector<std::uint32_t> ps;
    ps.reserve(parts.size());
    for (Var p : parts) {
      const Tensor& t = value(p);
      for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out.at(r + i, j) = t.at(i, j);
      r += t.rows();
      ps.push_back(p.idx);
    }
    return push_multi(Op::kConcatRows, std::move(out), ps);
  }

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows)
        throw ShapeError("concat_cols: row mismatch, " +
                         value(parts[0]).shape_str() + " vs " +
                         value(p).shape_str());
      cols += value(p).cols();
    }
    Tensor out(rows, cols);
    std::size_t c = 0;
    std::vector<std::uint32_t> ps;
    ps.reserve(parts.size());
    for (Var p : parts) {
      const Tensor& t = value(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, c + j) = t.at(i, j);
      c += t.cols();
      ps.push_back(p.idx);
    }
    return push_multi(Op::kConcatCols, std::move(out), ps);
  }

  // Half-open [r0, r1) x [c0, c1).
  Var slice(Var a, std::size_t r0, std::size_t r1, std::size_t c0,
            std::size_t c1) {
    const Tensor& t = value(a);
    if (r1 > t.rows() || c1 > t.cols() || r0 >= r1 || c0 >= c1)
      throw ShapeError("slice: window [" + std::to_string(r0) + "," +
                       std::to_string(r1) + ")x[" + std::to_string(c0) + "," +
                       std::to_string(c1) + ") out of " + t.shape_str());
    Tensor out(r1 - r0, c1 - c0);
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = c0; j < c1; ++j) out.at(i - r0, j - c0) = t.at(i, j);
    Var v = push(Op::kSlice, std::move(out), {a.idx});
    nodes_[v.idx].aux = {static_cast<std::uint32_t>(r0),
                         static_cast<std::uint32_t>(r1),
                         static_cast<std::uint32_t>(c0),
                         static_cast<std::uint32_t>(c1)};
    return v;
  }

  Var row(Var a, std::size_t r) { return slice(a, r, r + 1, 0, value(a).cols()); }

  Var sum_all(Var a) {
    double s = 0.0;
    const Tensor& t = value(a);
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
    return push(Op::kSumAll, Tensor::scalar(s), {a.idx});
  }

  Var mean_all(Var a) {
    const Tensor& t = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
    return push(Op::kMeanAll, Tensor::scalar(s / static_cast<double>(t.size())),
                {a.idx});
  }

  Var row_sum(Var a) { return reduce_rows(Op::kRowSum, a, false); }
  Var row_mean(Var a) { return reduce_rows(Op::kRowMean, a, true); }
  Var col_sum(Var a) { return reduce_cols(Op::kColSum, a, false); }
  Var col_mean(Var a) { return reduce_cols(Op::kColMean, a, true); }

  Var exp(Var a) { return unary(Op::kExp, a, [](double x) { return std::exp(x); }); }
  Var log(Var a) { return unary(Op::kLog, a, [](double x) { return std::log(x); }); }
  Var sqrt(Var a) { return unary(Op::kSqrt, a, [](double x) { return std::sqrt(x); }); }
  Var square(Var a) { return unary(Op::kSquare, a, [](double x) { return x * x; }); }

  // Rows sum to 1; row max is subtracted before exponentiation.
  Var softmax_rows(Var a) {
    const Tensor& t = value(a);
    Tensor out(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < t.cols(); ++j) mx = std::max(mx, t.at(i, j));
      double denom = 0.0;
      for (std::size_t j = 0; j < t.cols(); ++j) {
        out.at(i, j) = std::exp(t.at(i, j) - mx);
        denom += out.at(i, j);
      }
      for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) /= denom;
    }
    return push(Op::kSoftmaxRows, std::move(out), {a.idx});
  }

  // Numerically exact log-sum-exp over all entries; the max shift is a
  // detached constant, which leaves both value and gradient exact.
  Var logsumexp_all(Var a) {
    const Tensor& t = value(a);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.size(); ++i) mx = std::max(mx, t[i]);
    Var shifted = add_scalar(a, -mx);
    return add_scalar(log(sum_all(exp(shifted))), mx);
  }

  // Batch mean written as first + sum(deviations)/n: the gradient matches the
  // plain mean and a batch of identical terms reproduces the term bitwise.
  Var mean_of(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("mean_of: no operands");
    if (parts.size() == 1) return parts[0];
    Var acc;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      Var dev = sub(parts[i], parts[0]);
      acc = (i == 1) ? dev : add(acc, dev);
    }
    return add(parts[0], scale(acc, 1.0 / static_cast<double>(parts.size())));
  }

  // Scalar output only; every node's adjoint is accumulated in one reverse
  // sweep. Trainable leaves off any path to the output get zero gradients.
  Gradients backward(Var out) const {
    const Tensor& o = value(out);
    if (!o.is_scalar())
      throw ContractError("backward: output must be scalar, got " + o.shape_str());
    Gradients g;
    g.tape_ = this;
    g.adj_.resize(nodes_.size());
    g.adj_[out.idx] = Tensor::scalar(1.0);
    for (std::uint32_t i = out.idx + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (g.adj_[i].empty() || n.op == Op::kLeaf) continue;
      propagate(n, g.adj_[i], g.adj_);
    }
    if (strict_) {
      for (std::uint32_t i = 0; i <= out.idx; ++i) {
        if (nodes_[i].op == Op::kLeaf && nodes_[i].trainable &&
            !g.adj_[i].empty() && !g.adj_[i].all_finite())
          throw NumericError("backward: non-finite gradient for leaf node " +
                             std::to_string(i));
      }
    }
    return g;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    bool trainable = false;
    std::uint32_t p_begin = 0;
    std::uint32_t p_count = 0;
    double c = 0.0;
    std::array<std::uint32_t, 4> aux{};
    Tensor val;
  };

  friend class Gradients;

  const Node& node(Var v) const {
    if (!v.valid() || v.idx >= nodes_.size())
      throw ContractError("invalid tape variable");
    return nodes_[v.idx];
  }

  void check_finite(const Tensor& t, const char* op) const {
    if (strict_ && !t.all_finite())
      throw NumericError(std::string("non-finite values produced by op '") +
                         op + "'");
  }

  Var push(Op op, Tensor val, std::initializer_list<std::uint32_t> parents,
           double c = 0.0, bool trainable = false) {
    check_finite(val, op_name(op));
    Node n;
    n.op = op;
    n.trainable = trainable;
    n.c = c;
    n.p_begin = static_cast<std::uint32_t>(parents_.size());
    n.p_count = static_cast<std::uint32_t>(parents.size());
    for (std::uint32_t p : parents) parents_.push_back(p);
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var push_multi(Op op, Tensor val, const std::vector<std::uint32_t>& parents) {
    check_finite(val, op_name(op));
    Node n;
    n.op = op;
    n.p_begin = static_cast<std::uint32_t>(parents_.size());
    n.p_count = static_cast<std::uint32_t>(parents.size());
    parents_.insert(parents_.end(), parents.begin(), parents.end());
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <typename F>
  Var unary(Op op, Var a, F f) {
    const Tensor& t = value(a);
    Tensor out(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
    return push(op, std::move(out), {a.idx});
  }

  // Broadcasting: operands of equal shape, or one operand a row vector
  // [1 x n], column vector [m x 1], or scalar against an [m x n] matrix.
  static bool broadcastable(const Tensor& big, const Tensor& small) {
    if (small.rows() == 1 && small.cols() == 1) return true;
    if (small.rows() == 1 && small.cols() == big.cols()) return true;
    if (small.cols() == 1 && small.rows() == big.rows()) return true;
    return false;
  }

  static double fetch(const Tensor& t, std::size_t i, std::size_t j) {
    const std::size_t r = t.rows() == 1 ? 0 : i;
    const std::size_t c = t.cols() == 1 ? 0 : j;
    return t.at(r, c);
  }

  Var binary_broadcast(Op op, Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    const Tensor* big = &ta;
    if (!ta.same_shape(tb)) {
      if (broadcastable(ta, tb)) {
        big = &ta;
      } else if (broadcastable(tb, ta)) {
        big = &tb;
      } else {
        throw ShapeError(std::string(op_name(op)) + ": shapes " +
                         ta.shape_str() + " and " + tb.shape_str() +
                         " are not broadcastable");
      }
    }
    Tensor out(big->rows(), big->cols());
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) {
        const double x = fetch(ta, i, j);
        const double y = fetch(tb, i, j);
        out.at(i, j) = (op == Op::kAdd) ? x + y : x * y;
      }
    return push(op, std::move(out), {a.idx, b.idx});
  }

  Var reduce_rows(Op op, Var a, bool mean) {
    const Tensor& t = value(a);
    Tensor out(t.rows(), 1);
    for (std::size_t i = 0; i < t.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < t.cols(); ++j) s += t.at(i, j);
      out.at(i, 0) = mean ? s / static_cast<double>(t.cols()) : s;
    }
    return push(op, std::move(out), {a.idx});
  }

  Var reduce_cols(Op op, Var a, bool mean) {
    const Tensor& t = value(a);
    Tensor out(1, t.cols());
    for (std::size_t j = 0; j < t.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < t.rows(); ++i) s += t.at(i, j);
      out.at(0, j) = mean ? s / static_cast<double>(t.rows()) : s;
    }
    return push(op, std::move(out), {a.idx});
  }

  static void accumulate(Tensor& dst, const Tensor& shape_like,
                         const Tensor& add_term) {
    if (dst.empty()) dst = Tensor(shape_like.rows(), shape_like.cols());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += add_term[i];
  }

  // Reduce an [m x n] gradient down to the shape of a broadcast operand.
  static Tensor reduce_to_shape(const Tensor& g, const Tensor& target) {
    if (g.same_shape(target)) return g;
    Tensor out(target.rows(), target.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) {
        const std::size_t r = target.rows() == 1 ? 0 : i;
        const std::size_t c = target.cols() == 1 ? 0 : j;
        out.at(r, c) += g.at(i, j);
      }
    return out;
  }

  void add_into(std::vector<Tensor>& adj, std::uint32_t p, const Tensor& term) const {
    Tensor& slot = adj[p];
    if (slot.empty()) slot = Tensor(term.rows(), term.cols());
    for (std::size_t i = 0; i < term.size(); ++i) slot[i] += term[i];
  }

  void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& adj) const {
    const auto parent = [&](std::uint32_t k) { return parents_[n.p_begin + k]; };
    const auto pval = [&](std::uint32_t k) -> const Tensor& {
      return nodes_[parent(k)].val;
    };
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Tensor& a = pval(0);
        const Tensor& b = pval(1);
        add_into(adj, parent(0), vdpg::matmul(g, vdpg::transpose(b)));
        add_into(adj, parent(1), vdpg::matmul(vdpg::transpose(a), g));
        break;
      }
      case Op::kAdd: {
        add_into(adj, parent(0), reduce_to_shape(g, pval(0)));
        add_into(adj, parent(1), reduce_to_shape(g, pval(1)));
        break;
      }
      case Op::kMul: {
        const Tensor& a = pval(0);
        const Tensor& b = pval(1);
        Tensor ga(g.rows(), g.cols());
        Tensor gb(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) {
            ga.at(i, j) = g.at(i, j) * fetch(b, i, j);
            gb.at(i, j) = g.at(i, j) * fetch(a, i, j);
          }
        add_into(adj, parent(0), reduce_to_shape(ga, a));
        add_into(adj, parent(1), reduce_to_shape(gb, b));
        break;
      }
      case Op::kScale:
        add_into(adj, parent(0), vdpg::scale(g, n.c));
        break;
      case Op::kTranspose:
        add_into(adj, parent(0), vdpg::transpose(g));
        break;
      case Op::kConcatRows: {
        std::size_t r = 0;
        for (std::uint32_t k = 0; k < n.p_count; ++k) {
          const Tensor& p = pval(k);
          Tensor part(p.rows(), p.cols());
          for (std::size_t i = 0; i < p.rows(); ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
              part.at(i, j) = g.at(r + i, j);
          add_into(adj, parent(k), part);
          r += p.rows();
        }
        break;
      }
      case Op::kConcatCols: {
        std::size_t c = 0;
        for (std::uint32_t k = 0; k < n.p_count; ++k) {
          const Tensor& p = pval(k);
          Tensor part(p.rows(), p.cols());
          for (std::size_t i = 0; i < p.rows(); ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
              part.at(i, j) = g.at(i, c + j);
          add_into(adj, parent(k), part);
          c += p.cols();
        }
        break;
      }
      case Op::kSlice: {
        const Tensor& p = pval(0);
        Tensor part(p.rows(), p.cols());
        for (std::size_t i = n.aux[0]; i < n.aux[1]; ++i)
          for (std::size_t j = n.aux[2]; j < n.aux[3]; ++j)
            part.at(i, j) = g.at(i - n.aux[0], j - n.aux[2]);
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kSumAll: {
        const Tensor& p = pval(0);
        add_into(adj, parent(0), Tensor(p.rows(), p.cols(), g[0]));
        break;
      }
      case Op::kMeanAll: {
        const Tensor& p = pval(0);
        add_into(adj, parent(0),
                 Tensor(p.rows(), p.cols(), g[0] / static_cast<double>(p.size())));
        break;
      }
      case Op::kRowSum:
      case Op::kRowMean: {
        const Tensor& p = pval(0);
        const double inv =
            n.op == Op::kRowMean ? 1.0 / static_cast<double>(p.cols()) : 1.0;
        Tensor part(p.rows(), p.cols());
        for (std::size_t i = 0; i < p.rows(); ++i)
          for (std::size_t j = 0; j < p.cols(); ++j)
            part.at(i, j) = g.at(i, 0) * inv;
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kColSum:
      case Op::kColMean: {
        const Tensor& p = pval(0);
        const double inv =
            n.op == Op::kColMean ? 1.0 / static_cast<double>(p.rows()) : 1.0;
        Tensor part(p.rows(), p.cols());
        for (std::size_t i = 0; i < p.rows(); ++i)
          for (std::size_t j = 0; j < p.cols(); ++j)
            part.at(i, j) = g.at(0, j) * inv;
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kExp: {
        Tensor part = n.val;
        for (std::size_t i = 0; i < part.size(); ++i) part[i] *= g[i];
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kLog: {
        const Tensor& p = pval(0);
        Tensor part(p.rows(), p.cols());
        for (std::size_t i = 0; i < part.size(); ++i) part[i] = g[i] / p[i];
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kSqrt: {
        Tensor part(n.val.rows(), n.val.cols());
        for (std::size_t i = 0; i < part.size(); ++i)
          part[i] = g[i] * 0.5 / n.val[i];
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kSquare: {
        const Tensor& p = pval(0);
        Tensor part(p.rows(), p.cols());
        for (std::size_t i = 0; i < part.size(); ++i) part[i] = g[i] * 2.0 * p[i];
        add_into(adj, parent(0), part);
        break;
      }
      case Op::kSoftmaxRows: {
        const Tensor& s = n.val;
        Tensor part(s.rows(), s.cols());
        for (std::size_t i = 0; i < s.rows(); ++i) {
          double dotgs = 0.0;
          for (std::size_t j = 0; j < s.cols(); ++j)
            dotgs += g.at(i, j) * s.at(i, j);
          for (std::size_t j = 0; j < s.cols(); ++j)
            part.at(i, j) = s.at(i, j) * (g.at(i, j) - dotgs);
        }
        add_into(adj, parent(0), part);
        break;
      }
    }
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kLeaf: return "leaf";
      case Op::kMatMul: return "matmul";
      case Op::kAdd: return "add";
      case Op::kMul: return "mul";
      case Op::kScale: return "scale";
      case Op::kTranspose: return "transpose";
      case Op::kConcatRows: return "concat_rows";
      case Op::kConcatCols: return "concat_cols";
      case Op::kSlice: return "slice";
      case Op::kSumAll: return "sum_all";
      case Op::kMeanAll: return "mean_all";
      case Op::kRowSum: return "row_sum";
      case Op::kRowMean: return "row_mean";
      case Op::kColSum: return "col_sum";
      case Op::kColMean: return "col_mean";
      case Op::kExp: return "exp";
      case Op::kLog: return "log";
      case Op::kSqrt: return "sqrt";
      case Op::kSquare: return "square";
      case Op::kSoftmaxRows: return "softmax_rows";
    }
    return "?";
  }

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> parents_;
  bool strict_;
};

inline const Tensor& Gradients::grad(Var v) const {
  if (!v.valid() || v.idx >= adj_.size())
    throw ContractError("Gradients::grad: invalid variable");
  Tensor& a = adj_[v.idx];
  if (a.empty()) {
    // Unreached node: materialize a zero gradient of the right shape.
    const Tensor& val = tape_->nodes_[v.idx].val;
    a = Tensor(val.rows(), val.cols());
  }
  return a;
}

}  // namespace vdpg
