#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lumifield {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
class Tape;

// Lightweight handle to a node on a tape.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape over dense matrices. Values are recorded in forward
// order; backward() replays the adjoint closures in reverse. A tape is
// built, differentiated and discarded within a single optimization step;
// it is not safe for concurrent mutation.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> leaf(Mat<S> value, bool requires_grad = true) {
    return emplace(std::move(value), requires_grad);
  }

  Var<S> constant(Mat<S> value) { return leaf(std::move(value), false); }

  Var<S> constant_scalar(S value) {
    Mat<S> m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
  }

  Var<S> emplace(Mat<S> value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), nullptr, needs_grad, false});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backprop(int id, std::function<void()> fn) {
    nodes_[static_cast<std::size_t>(id)].backprop = std::move(fn);
  }

  const Mat<S>& value(Var<S> v) const { return node(v).value; }

  S scalar_value(Var<S> v) const {
    const Mat<S>& m = node(v).value;
    if (m.size() != 1) throw std::logic_error("scalar_value: node is not 1x1");
    return m(0, 0);
  }

  // Gradient of the last backward() target with respect to v. Zero if the
  // target did not depend on v. Requesting the gradient of a node created
  // without requires_grad is an error (the value is detached).
  Mat<S> grad(Var<S> v) const {
    const Node& n = node(v);
    if (!n.needs_grad)
      throw std::logic_error("gradient requested for a detached (non-differentiable) value");
    if (!n.seeded) return Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<S> loss) {
    const Node& ln = node(loss);
    if (ln.value.size() != 1) throw std::logic_error("backward: loss must be a 1x1 scalar");
    if (!std::isfinite(static_cast<double>(ln.value(0, 0))))
      throw std::runtime_error("backward: loss is not finite");
    if (!ln.needs_grad) return;  // constant loss: all gradients stay zero
    seed(loss.id, Mat<S>::Constant(1, 1, S(1)));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.seeded && n.backprop) n.backprop();
    }
  }

  // Adds g into the adjoint of node id (no-op for non-differentiable nodes).
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.seeded) {
      n.grad = g;
      n.seeded = true;
    } else {
      n.grad += g;
    }
  }

  void seed(int id, Mat<S> g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.grad = std::move(g);
    n.seeded = true;
  }

  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const Mat<S>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat<S>& adj(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    std::function<void()> backprop;
    bool needs_grad = false;
    bool seeded = false;
  };

  const Node& node(Var<S> v) const {
    if (v.tape != this) throw std::logic_error("variable does not belong to this tape");
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("variable id out of range");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename S>
Tape<S>& same_tape(Var<S> a, Var<S> b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape)
    throw std::logic_error("operands are detached or live on different tapes");
  return *a.tape;
}

template <typename S>
Tape<S>& own_tape(Var<S> a) {
  if (!a.valid()) throw std::logic_error("operand is detached from any tape");
  return *a.tape;
}

template <typename S>
void check_same_shape(const Mat<S>& a, const Mat<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// element-wise binary ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::same_tape(a, b);
  detail::check_same_shape(t.val(a.id), t.val(b.id), "add");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  Var<S> r = t.emplace(t.val(a.id) + t.val(b.id), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, bi = b.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, bi, ri] {
      tp->accumulate(ai, tp->adj(ri));
      tp->accumulate(bi, tp->adj(ri));
    });
  }
  return r;
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::same_tape(a, b);
  detail::check_same_shape(t.val(a.id), t.val(b.id), "sub");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  Var<S> r = t.emplace(t.val(a.id) - t.val(b.id), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, bi = b.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, bi, ri] {
      tp->accumulate(ai, tp->adj(ri));
      tp->accumulate(bi, (-tp->adj(ri)).eval());
    });
  }
  return r;
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::same_tape(a, b);
  detail::check_same_shape(t.val(a.id), t.val(b.id), "mul");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  Var<S> r = t.emplace(t.val(a.id).cwiseProduct(t.val(b.id)), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, bi = b.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, bi, ri] {
      tp->accumulate(ai, tp->adj(ri).cwiseProduct(tp->val(bi)));
      tp->accumulate(bi, tp->adj(ri).cwiseProduct(tp->val(ai)));
    });
  }
  return r;
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::same_tape(a, b);
  detail::check_same_shape(t.val(a.id), t.val(b.id), "div");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  Var<S> r = t.emplace(t.val(a.id).cwiseQuotient(t.val(b.id)), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, bi = b.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, bi, ri] {
      tp->accumulate(ai, tp->adj(ri).cwiseQuotient(tp->val(bi)));
      tp->accumulate(bi, (-tp->adj(ri).array() * tp->val(ri).array() / tp->val(bi).array()).matrix());
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// scalar-argument and unary ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> scale(Var<S> a, S s) {
  Tape<S>& t = detail::own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(t.val(a.id) * s, ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri, s] { tp->accumulate(ai, (tp->adj(ri) * s).eval()); });
  }
  return r;
}

template <typename S>
Var<S> add_const(Var<S> a, S s) {
  Tape<S>& t = detail::own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace((t.val(a.id).array() + s).matrix(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri] { tp->accumulate(ai, tp->adj(ri)); });
  }
  return r;
}

template <typename S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

// Adds a 1x1 variable to every element (used for log-exposure offsets).
template <typename S>
Var<S> add_broadcast_scalar(Var<S> a, Var<S> s) {
  Tape<S>& t = detail::same_tape(a, s);
  if (t.val(s.id).size() != 1) throw std::invalid_argument("add_broadcast_scalar: s must be 1x1");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(s.id);
  Var<S> r = t.emplace((t.val(a.id).array() + t.val(s.id)(0, 0)).matrix(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, si = s.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, si, ri] {
      tp->accumulate(ai, tp->adj(ri));
      tp->accumulate(si, Mat<S>::Constant(1, 1, tp->adj(ri).sum()));
    });
  }
  return r;
}

namespace detail {

template <typename S, typename FwdFn, typename BwdFn>
Var<S> unary_op(Var<S> a, FwdFn fwd, BwdFn bwd) {
  Tape<S>& t = own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(fwd(t.val(a.id)), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri, bwd] {
      // bwd(x, y, g) -> adjoint contribution to x
      tp->accumulate(ai, bwd(tp->val(ai), tp->val(ri), tp->adj(ri)));
    });
  }
  return r;
}

}  // namespace detail

template <typename S>
Var<S> exp_(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.array().exp().matrix().eval(); },
      [](const Mat<S>&, const Mat<S>& y, const Mat<S>& g) {
        return g.cwiseProduct(y).eval();
      });
}

template <typename S>
Var<S> log_(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.array().log().matrix().eval(); },
      [](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return g.cwiseQuotient(x).eval();
      });
}

template <typename S>
Var<S> sin_(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.array().sin().matrix().eval(); },
      [](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return (g.array() * x.array().cos()).matrix().eval();
      });
}

template <typename S>
Var<S> cos_(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.array().cos().matrix().eval(); },
      [](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return (-g.array() * x.array().sin()).matrix().eval();
      });
}

template <typename S>
Var<S> sqrt_(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.array().sqrt().matrix().eval(); },
      [](const Mat<S>&, const Mat<S>& y, const Mat<S>& g) {
        return (g.array() * (S(0.5) / y.array())).matrix().eval();
      });
}

template <typename S>
Var<S> square(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.array().square().matrix().eval(); },
      [](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return (g.array() * S(2) * x.array()).matrix().eval();
      });
}

template <typename S>
Var<S> relu(Var<S> a) {
  return detail::unary_op(
      a, [](const Mat<S>& x) { return x.cwiseMax(S(0)).eval(); },
      [](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return (g.array() * (x.array() > S(0)).template cast<S>()).matrix().eval();
      });
}

// softplus(x) - log 2, so the activation is zero-centred at x = 0.
template <typename S>
Var<S> softplus_shift(Var<S> a) {
  return detail::unary_op(
      a,
      [](const Mat<S>& x) {
        return (((-x.array().abs()).exp() + S(1)).log() + x.array().max(S(0)) -
                S(std::log(2.0)))
            .matrix()
            .eval();
      },
      [](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return (g.array() / ((-x.array()).exp() + S(1))).matrix().eval();
      });
}

template <typename S>
Var<S> clamp_min(Var<S> a, S floor) {
  return detail::unary_op(
      a, [floor](const Mat<S>& x) { return x.cwiseMax(floor).eval(); },
      [floor](const Mat<S>& x, const Mat<S>&, const Mat<S>& g) {
        return (g.array() * (x.array() > floor).template cast<S>()).matrix().eval();
      });
}

// x^p with x > 0 enforced by the caller (clamped upstream).
template <typename S>
Var<S> pow_(Var<S> a, S p) {
  return detail::unary_op(
      a,
      [p](const Mat<S>& x) { return (x.array().log() * p).exp().matrix().eval(); },
      [p](const Mat<S>& x, const Mat<S>& y, const Mat<S>& g) {
        return (g.array() * p * y.array() / x.array()).matrix().eval();
      });
}

// ---------------------------------------------------------------------------
// matrix product and reshaping
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = detail::same_tape(a, b);
  if (t.val(a.id).cols() != t.val(b.id).rows())
    throw std::invalid_argument("matmul: inner dimensions disagree");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  Var<S> r = t.emplace(t.val(a.id) * t.val(b.id), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, bi = b.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, bi, ri] {
      if (tp->needs_grad(ai)) tp->accumulate(ai, (tp->adj(ri) * tp->val(bi).transpose()).eval());
      if (tp->needs_grad(bi)) tp->accumulate(bi, (tp->val(ai).transpose() * tp->adj(ri)).eval());
    });
  }
  return r;
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = detail::own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(t.val(a.id).transpose(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri] { tp->accumulate(ai, tp->adj(ri).transpose().eval()); });
  }
  return r;
}

// Column-major reinterpretation; element count must match.
template <typename S>
Var<S> reshape(Var<S> a, int rows, int cols) {
  Tape<S>& t = detail::own_tape(a);
  if (t.val(a.id).size() != static_cast<Eigen::Index>(rows) * cols)
    throw std::invalid_argument("reshape: element count mismatch");
  const bool ng = t.needs_grad(a.id);
  Mat<S> out = t.val(a.id);
  out.resize(rows, cols);
  Var<S> r = t.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri] {
      Mat<S> g = tp->adj(ri);
      g.resize(tp->val(ai).rows(), tp->val(ai).cols());
      tp->accumulate(ai, g);
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// slicing and concatenation
// ---------------------------------------------------------------------------

template <typename S>
Var<S> slice_rows(Var<S> a, int row0, int nrows) {
  Tape<S>& t = detail::own_tape(a);
  if (row0 < 0 || nrows < 0 || row0 + nrows > t.val(a.id).rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(t.val(a.id).middleRows(row0, nrows), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri, row0, nrows] {
      Mat<S> g = Mat<S>::Zero(tp->val(ai).rows(), tp->val(ai).cols());
      g.middleRows(row0, nrows) = tp->adj(ri);
      tp->accumulate(ai, g);
    });
  }
  return r;
}

template <typename S>
Var<S> slice_cols(Var<S> a, int col0, int ncols) {
  Tape<S>& t = detail::own_tape(a);
  if (col0 < 0 || ncols < 0 || col0 + ncols > t.val(a.id).cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(t.val(a.id).middleCols(col0, ncols), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri, col0, ncols] {
      Mat<S> g = Mat<S>::Zero(tp->val(ai).rows(), tp->val(ai).cols());
      g.middleCols(col0, ncols) = tp->adj(ri);
      tp->accumulate(ai, g);
    });
  }
  return r;
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  Tape<S>& t = detail::own_tape(parts[0]);
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.val(parts[0].id).cols();
  bool ng = false;
  for (const Var<S>& p : parts) {
    if (p.tape != &t) throw std::logic_error("concat_rows: mixed tapes");
    if (t.val(p.id).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += t.val(p.id).rows();
    ng = ng || t.needs_grad(p.id);
  }
  Mat<S> out(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> ids;
  std::vector<int> offsets;
  ids.reserve(parts.size());
  offsets.reserve(parts.size());
  for (const Var<S>& p : parts) {
    const Eigen::Index n = t.val(p.id).rows();
    out.middleRows(at, n) = t.val(p.id);
    ids.push_back(p.id);
    offsets.push_back(static_cast<int>(at));
    at += n;
  }
  Var<S> r = t.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ri = r.id;
    t.set_backprop(ri, [tp, ri, ids, offsets] {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const Eigen::Index n = tp->val(ids[k]).rows();
        tp->accumulate(ids[k], tp->adj(ri).middleRows(offsets[k], n).eval());
      }
    });
  }
  return r;
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  Tape<S>& t = detail::own_tape(parts[0]);
  Eigen::Index cols = 0;
  const Eigen::Index rows = t.val(parts[0].id).rows();
  bool ng = false;
  for (const Var<S>& p : parts) {
    if (p.tape != &t) throw std::logic_error("concat_cols: mixed tapes");
    if (t.val(p.id).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.val(p.id).cols();
    ng = ng || t.needs_grad(p.id);
  }
  Mat<S> out(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> ids;
  std::vector<int> offsets;
  for (const Var<S>& p : parts) {
    const Eigen::Index n = t.val(p.id).cols();
    out.middleCols(at, n) = t.val(p.id);
    ids.push_back(p.id);
    offsets.push_back(static_cast<int>(at));
    at += n;
  }
  Var<S> r = t.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ri = r.id;
    t.set_backprop(ri, [tp, ri, ids, offsets] {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const Eigen::Index n = tp->val(ids[k]).cols();
        tp->accumulate(ids[k], tp->adj(ri).middleCols(offsets[k], n).eval());
      }
    });
  }
  return r;
}

template <typename S>
Var<S> gather_rows(Var<S> a, std::vector<int> rows) {
  Tape<S>& t = detail::own_tape(a);
  for (int rix : rows)
    if (rix < 0 || rix >= t.val(a.id).rows())
      throw std::invalid_argument("gather_rows: index out of range");
  const bool ng = t.needs_grad(a.id);
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), t.val(a.id).cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.val(a.id).row(rows[i]);
  Var<S> r = t.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri, rows = std::move(rows)] {
      Mat<S> g = Mat<S>::Zero(tp->val(ai).rows(), tp->val(ai).cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        g.row(rows[i]) += tp->adj(ri).row(static_cast<Eigen::Index>(i));
      tp->accumulate(ai, g);
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// broadcasts and reductions
// ---------------------------------------------------------------------------

// a (P x C) + row vector (1 x C) broadcast over rows.
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> rv) {
  Tape<S>& t = detail::same_tape(a, rv);
  if (t.val(rv.id).rows() != 1 || t.val(rv.id).cols() != t.val(a.id).cols())
    throw std::invalid_argument("add_rowvec: operand must be 1 x cols(a)");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(rv.id);
  Var<S> r = t.emplace((t.val(a.id).rowwise() + t.val(rv.id).row(0)).eval(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, vi = rv.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, vi, ri] {
      tp->accumulate(ai, tp->adj(ri));
      tp->accumulate(vi, tp->adj(ri).colwise().sum().eval());
    });
  }
  return r;
}

// a (P x C) scaled per column by row vector (1 x C).
template <typename S>
Var<S> mul_rowvec(Var<S> a, Var<S> rv) {
  Tape<S>& t = detail::same_tape(a, rv);
  if (t.val(rv.id).rows() != 1 || t.val(rv.id).cols() != t.val(a.id).cols())
    throw std::invalid_argument("mul_rowvec: operand must be 1 x cols(a)");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(rv.id);
  Var<S> r = t.emplace((t.val(a.id).array().rowwise() * t.val(rv.id).row(0).array()).matrix().eval(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, vi = rv.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, vi, ri] {
      if (tp->needs_grad(ai))
        tp->accumulate(ai, (tp->adj(ri).array().rowwise() * tp->val(vi).row(0).array()).matrix().eval());
      if (tp->needs_grad(vi))
        tp->accumulate(vi, tp->adj(ri).cwiseProduct(tp->val(ai)).colwise().sum().eval());
    });
  }
  return r;
}

// a (P x C) scaled per row by column vector (P x 1).
template <typename S>
Var<S> mul_colvec(Var<S> a, Var<S> cv) {
  Tape<S>& t = detail::same_tape(a, cv);
  if (t.val(cv.id).cols() != 1 || t.val(cv.id).rows() != t.val(a.id).rows())
    throw std::invalid_argument("mul_colvec: operand must be rows(a) x 1");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(cv.id);
  Var<S> r = t.emplace((t.val(a.id).array().colwise() * t.val(cv.id).col(0).array()).matrix().eval(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, vi = cv.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, vi, ri] {
      if (tp->needs_grad(ai))
        tp->accumulate(ai, (tp->adj(ri).array().colwise() * tp->val(vi).col(0).array()).matrix().eval());
      if (tp->needs_grad(vi))
        tp->accumulate(vi, tp->adj(ri).cwiseProduct(tp->val(ai)).rowwise().sum().eval());
    });
  }
  return r;
}

template <typename S>
Var<S> div_colvec(Var<S> a, Var<S> cv) {
  Tape<S>& t = detail::same_tape(a, cv);
  if (t.val(cv.id).cols() != 1 || t.val(cv.id).rows() != t.val(a.id).rows())
    throw std::invalid_argument("div_colvec: operand must be rows(a) x 1");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(cv.id);
  Var<S> r = t.emplace((t.val(a.id).array().colwise() / t.val(cv.id).col(0).array()).matrix().eval(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, vi = cv.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, vi, ri] {
      if (tp->needs_grad(ai))
        tp->accumulate(ai, (tp->adj(ri).array().colwise() / tp->val(vi).col(0).array()).matrix().eval());
      if (tp->needs_grad(vi))
        tp->accumulate(vi, (-(tp->adj(ri).cwiseProduct(tp->val(ri)).rowwise().sum().array()) /
                            tp->val(vi).col(0).array())
                               .matrix()
                               .eval());
    });
  }
  return r;
}

template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = detail::own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(Mat<S>::Constant(1, 1, t.val(a.id).sum()), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri] {
      tp->accumulate(ai, Mat<S>::Constant(tp->val(ai).rows(), tp->val(ai).cols(), tp->adj(ri)(0, 0)));
    });
  }
  return r;
}

template <typename S>
Var<S> mean(Var<S> a) {
  Tape<S>& t = detail::own_tape(a);
  const S inv = S(1) / static_cast<S>(t.val(a.id).size());
  return scale(sum(a), inv);
}

template <typename S>
Var<S> rowsum(Var<S> a) {
  Tape<S>& t = detail::own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(t.val(a.id).rowwise().sum().eval(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri] {
      tp->accumulate(ai, tp->adj(ri).col(0).replicate(1, tp->val(ai).cols()).eval());
    });
  }
  return r;
}

template <typename S>
Var<S> colsum(Var<S> a) {
  Tape<S>& t = detail::own_tape(a);
  const bool ng = t.needs_grad(a.id);
  Var<S> r = t.emplace(t.val(a.id).colwise().sum().eval(), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, ri] {
      tp->accumulate(ai, tp->adj(ri).row(0).replicate(tp->val(ai).rows(), 1).eval());
    });
  }
  return r;
}

// Row-wise dot product of equal-shaped matrices -> P x 1.
template <typename S>
Var<S> rowdot(Var<S> a, Var<S> b) {
  return rowsum(mul(a, b));
}

// ---------------------------------------------------------------------------
// fused layers
// ---------------------------------------------------------------------------

// Row-wise layer normalisation with learned gain/bias (1 x C each).
template <typename S>
Var<S> layer_norm_rows(Var<S> a, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  Tape<S>& t = detail::same_tape(a, gain);
  detail::same_tape(gain, bias);
  const Mat<S>& x = t.val(a.id);
  const Eigen::Index c = x.cols();
  if (t.val(gain.id).rows() != 1 || t.val(gain.id).cols() != c ||
      t.val(bias.id).rows() != 1 || t.val(bias.id).cols() != c)
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols(a)");
  const bool ng = t.needs_grad(a.id) || t.needs_grad(gain.id) || t.needs_grad(bias.id);

  Eigen::Array<S, Eigen::Dynamic, 1> mu = x.rowwise().mean().array();
  Mat<S> centered = (x.array().colwise() - mu).matrix();
  Eigen::Array<S, Eigen::Dynamic, 1> var =
      centered.array().square().rowwise().mean();
  Eigen::Array<S, Eigen::Dynamic, 1> inv_sigma = (var + eps).rsqrt();
  Mat<S> xhat = (centered.array().colwise() * inv_sigma).matrix();
  Mat<S> out =
      ((xhat.array().rowwise() * t.val(gain.id).row(0).array()).rowwise() +
       t.val(bias.id).row(0).array())
          .matrix();
  Var<S> r = t.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int ai = a.id, gi = gain.id, bi = bias.id, ri = r.id;
    t.set_backprop(ri, [tp, ai, gi, bi, ri, xhat = std::move(xhat),
                        inv_sigma = std::move(inv_sigma)] {
      const Mat<S>& g = tp->adj(ri);
      if (tp->needs_grad(bi)) tp->accumulate(bi, g.colwise().sum().eval());
      if (tp->needs_grad(gi)) tp->accumulate(gi, g.cwiseProduct(xhat).colwise().sum().eval());
      if (tp->needs_grad(ai)) {
        // w = g * gain; dx = (w - mean(w) - xhat * mean(w . xhat)) * inv_sigma
        Mat<S> w = (g.array().rowwise() * tp->val(gi).row(0).array()).matrix();
        Eigen::Array<S, Eigen::Dynamic, 1> mw = w.rowwise().mean().array();
        Eigen::Array<S, Eigen::Dynamic, 1> mwx =
            w.cwiseProduct(xhat).rowwise().mean().array();
        Mat<S> dx = (((w.array().colwise() - mw) -
                      (xhat.array().colwise() * mwx))
                         .colwise() *
                     inv_sigma)
                        .matrix();
        tp->accumulate(ai, dx);
      }
    });
  }
  return r;
}

// Multi-head cross attention with a fixed head count. q: P x H, k/v: N x H;
// returns softmax(q_h k_h^T / sqrt(H/heads)) v_h concatenated over heads
// (P x H), before any output projection.
template <typename S>
Var<S> multihead_attention(Var<S> q, Var<S> k, Var<S> v, int heads) {
  Tape<S>& t = detail::same_tape(q, k);
  detail::same_tape(k, v);
  const Eigen::Index h = t.val(q.id).cols();
  const Eigen::Index n = t.val(k.id).rows();
  const Eigen::Index p = t.val(q.id).rows();
  if (t.val(k.id).cols() != h || t.val(v.id).cols() != h || t.val(v.id).rows() != n)
    throw std::invalid_argument("multihead_attention: shape mismatch");
  if (heads <= 0 || h % heads != 0)
    throw std::invalid_argument("multihead_attention: width must divide by heads");
  const Eigen::Index dh = h / heads;
  const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
  const bool ng = t.needs_grad(q.id) || t.needs_grad(k.id) || t.needs_grad(v.id);

  Mat<S> out(p, h);
  Mat<S> attn(p, static_cast<Eigen::Index>(heads) * n);  // saved softmax weights
  for (int hd = 0; hd < heads; ++hd) {
    auto qh = t.val(q.id).middleCols(hd * dh, dh);
    auto kh = t.val(k.id).middleCols(hd * dh, dh);
    auto vh = t.val(v.id).middleCols(hd * dh, dh);
    Mat<S> scores = (qh * kh.transpose()) * inv_sqrt_dh;  // P x N
    Eigen::Array<S, Eigen::Dynamic, 1> rowmax = scores.rowwise().maxCoeff().array();
    Mat<S> e = (scores.array().colwise() - rowmax).exp().matrix();
    Eigen::Array<S, Eigen::Dynamic, 1> z = e.rowwise().sum().array();
    Mat<S> a = (e.array().colwise() / z).matrix();
    attn.middleCols(static_cast<Eigen::Index>(hd) * n, n) = a;
    out.middleCols(hd * dh, dh) = a * vh;
  }
  Var<S> r = t.emplace(std::move(out), ng);
  if (ng) {
    Tape<S>* tp = &t;
    const int qi = q.id, ki = k.id, vi = v.id, ri = r.id;
    t.set_backprop(ri, [tp, qi, ki, vi, ri, heads, dh, n, inv_sqrt_dh,
                        attn = std::move(attn)] {
      const Mat<S>& g = tp->adj(ri);
      const Eigen::Index p = g.rows();
      Mat<S> dq = Mat<S>::Zero(p, static_cast<Eigen::Index>(heads) * dh);
      Mat<S> dk = Mat<S>::Zero(n, static_cast<Eigen::Index>(heads) * dh);
      Mat<S> dv = Mat<S>::Zero(n, static_cast<Eigen::Index>(heads) * dh);
      for (int hd = 0; hd < heads; ++hd) {
        auto a = attn.middleCols(static_cast<Eigen::Index>(hd) * n, n);
        auto gh = g.middleCols(hd * dh, dh);
        auto vh = tp->val(vi).middleCols(hd * dh, dh);
        dv.middleCols(hd * dh, dh) = a.transpose() * gh;
        Mat<S> da = gh * vh.transpose();  // P x N
        Eigen::Array<S, Eigen::Dynamic, 1> dot =
            da.cwiseProduct(a).rowwise().sum().array();
        Mat<S> ds = (a.array() * (da.array().colwise() - dot)).matrix() * inv_sqrt_dh;
        dq.middleCols(hd * dh, dh) = ds * tp->val(ki).middleCols(hd * dh, dh);
        dk.middleCols(hd * dh, dh) = ds.transpose() * tp->val(qi).middleCols(hd * dh, dh);
      }
      tp->accumulate(qi, dq);
      tp->accumulate(ki, dk);
      tp->accumulate(vi, dv);
    });
  }
  return r;
}

}  // namespace lumifield
