#include "cmvae/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"

namespace cmvae {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw GraphError("operation on an unbound variable");
  if (&a.tape() != &b.tape()) throw GraphError("operands recorded on different tapes");
  return a.tape();
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw GraphError("operation on an unbound variable");
  return a.tape();
}

// Result shape of a broadcasting binary op. Entry i of the output reads
// a[i % a.size()] and b[i % b.size()].
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  auto without_leading = [](const Shape& s) { return Shape(s.begin() + 1, s.end()); };
  if (b.empty()) return a;
  if (a.empty()) return b;
  if (a.size() >= 2 && without_leading(a) == b) return a;
  if (b.size() >= 2 && without_leading(b) == a) return b;
  throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_string(a) + " vs " +
                   shape_string(b));
}

template <class Forward, class Backward>
Var binary(const char* name, const Var& a, const Var& b, Forward forward, Backward backward) {
  Tape& tape = same_tape(a, b);
  const DenseArray& av = a.value();
  const DenseArray& bv = b.value();
  Shape shape = broadcast_shape(name, av.shape(), bv.shape());
  DenseArray out(shape);
  const std::size_t n = out.size(), na = av.size(), nb = bv.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = forward(av[i % na], bv[i % nb]);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, backward](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    const DenseArray& x = t.value_of(ia);
    const DenseArray& y = t.value_of(ib);
    const DenseArray& o = t.value_of(self);
    const std::size_t n = g.size(), nx = x.size(), ny = y.size();
    const bool want_a = t.needs_grad(ia), want_b = t.needs_grad(ib);
    DenseArray* ga = want_a ? &t.grad_slot(ia) : nullptr;
    DenseArray* gb = want_b ? &t.grad_slot(ib) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      double da = 0.0, db = 0.0;
      backward(x[i % nx], y[i % ny], o[i], g[i], da, db);
      if (ga) (*ga)[i % nx] += da;
      if (gb) (*gb)[i % ny] += db;
    }
  });
}

template <class Forward, class Derivative>
Var unary(const Var& a, Forward forward, Derivative derivative) {
  Tape& tape = tape_of(a);
  const DenseArray& av = a.value();
  DenseArray out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(av[i]);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, derivative](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    const DenseArray& x = t.value_of(ia);
    const DenseArray& o = t.value_of(self);
    DenseArray& gx = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(x[i], o[i]);
  });
}

void require_rank2(const char* op, const Var& a) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 array, got " + shape_string(a.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const DenseArray& Var::value() const {
  if (!tape_) throw GraphError("unbound variable");
  return tape_->value_of(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->needs_grad(id_); }

Tape& Var::tape() const {
  if (!tape_) throw GraphError("unbound variable");
  return *tape_;
}

Var Tape::constant(DenseArray value) {
  nodes_.push_back(Node{std::move(value), DenseArray(), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(DenseArray value) {
  nodes_.push_back(Node{std::move(value), DenseArray(), {}, {}, record_});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(DenseArray value, std::vector<std::size_t> parents, Backprop backprop) {
  const std::size_t id = nodes_.size();
  bool tracked = false;
  for (std::size_t p : parents) {
    if (p >= id) throw GraphError("node references a parent that is not yet recorded");
    tracked = tracked || nodes_[p].requires_grad;
  }
  tracked = tracked && record_;
  Node node{std::move(value), DenseArray(), {}, {}, tracked};
  if (tracked) {
    node.parents = std::move(parents);
    node.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

DenseArray& Tape::grad_slot(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.shape() != node.value.shape()) node.grad = DenseArray(node.value.shape());
  return node.grad;
}

void Tape::check_owned(const Var& v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw GraphError("variable does not belong to this tape");
  }
}

void Tape::backward(const Var& loss) {
  check_owned(loss);
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  }
  for (Node& node : nodes_) node.grad = DenseArray();
  if (!record_) return;
  const std::size_t root = loss.id();
  grad_slot(root)[0] = 1.0;
  for (std::size_t id = root + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backprop || node.grad.empty()) continue;
    for (std::size_t p : node.parents) {
      if (p >= id) throw GraphError("cycle detected in computation graph");
    }
    node.backprop(*this, id);
  }
}

DenseArray Tape::gradient(const Var& v) const {
  check_owned(v);
  const Node& node = nodes_[v.id()];
  if (node.grad.shape() == node.value.shape()) return node.grad;
  return DenseArray(node.value.shape());
}

// ---------------------------------------------------------------------------
// Elementwise

Var operator+(const Var& a, const Var& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Var operator-(const Var& a, const Var& b) {
  return binary(
      "subtract", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Var operator*(const Var& a, const Var& b) {
  return binary(
      "multiply", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Var operator/(const Var& a, const Var& b) {
  return binary(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double o, double g, double& da, double& db) {
        da = g / y;
        db = -g * o / y;
      });
}

Var operator-(const Var& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var operator+(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
Var operator+(double c, const Var& a) { return a + c; }
Var operator-(const Var& a, double c) { return a + (-c); }
Var operator-(double c, const Var& a) {
  return unary(a, [c](double x) { return c - x; }, [](double, double) { return -1.0; });
}
Var operator*(const Var& a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}
Var operator*(double c, const Var& a) { return a * c; }

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](double, double o) { return o * (1.0 - o); });
}

Var softplus(const Var& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidArgument("clamp bounds out of order");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var affine(const Var& x, const Var& weight, const Var& bias) {
  Tape& tape = same_tape(x, weight);
  same_tape(x, bias);
  const DenseArray& xv = x.value();
  const DenseArray& wv = weight.value();
  const DenseArray& bv = bias.value();
  if (wv.rank() != 2) throw ShapeError("affine weight must be rank 2, got " + shape_string(wv.shape()));
  const std::size_t out_dim = wv.shape()[0], in_dim = wv.shape()[1];
  if (bv.shape() != Shape{out_dim}) {
    throw ShapeError("shape mismatch in affine bias: " + shape_string(bv.shape()) + " vs " +
                     shape_string(Shape{out_dim}));
  }
  const bool batched = xv.rank() == 2;
  if (!(batched && xv.shape()[1] == in_dim) && !(xv.rank() == 1 && xv.shape()[0] == in_dim)) {
    throw ShapeError("shape mismatch in affine: input " + shape_string(xv.shape()) + " vs weight " +
                     shape_string(wv.shape()));
  }
  const std::size_t batch = batched ? xv.shape()[0] : 1;
  DenseArray out(batched ? Shape{batch, out_dim} : Shape{out_dim});
  {
    ConstMatrixMap X(xv.data().data(), batch, in_dim);
    ConstMatrixMap W(wv.data().data(), out_dim, in_dim);
    MatrixMap Y(out.data().data(), batch, out_dim);
    Y.noalias() = X * W.transpose();
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t c = 0; c < out_dim; ++c) Y(r, c) += bv[c];
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, iw, ib},
                     [ix, iw, ib, batch, in_dim, out_dim](Tape& t, std::size_t self) {
                       ConstMatrixMap G(t.grad_of(self).data().data(), batch, out_dim);
                       if (t.needs_grad(ix)) {
                         ConstMatrixMap W(t.value_of(iw).data().data(), out_dim, in_dim);
                         MatrixMap GX(t.grad_slot(ix).data().data(), batch, in_dim);
                         GX.noalias() += G * W;
                       }
                       if (t.needs_grad(iw)) {
                         ConstMatrixMap X(t.value_of(ix).data().data(), batch, in_dim);
                         MatrixMap GW(t.grad_slot(iw).data().data(), out_dim, in_dim);
                         GW.noalias() += G.transpose() * X;
                       }
                       if (t.needs_grad(ib)) {
                         DenseArray& gb = t.grad_slot(ib);
                         for (std::size_t r = 0; r < batch; ++r)
                           for (std::size_t c = 0; c < out_dim; ++c) gb[c] += G(r, c);
                       }
                     });
}

Var frozen_tanh_network(const Var& input, const Var& output, std::span<const Var> hidden,
                        std::span<const Var> weights) {
  Tape& tape = same_tape(input, output);
  if (weights.size() != hidden.size() + 1) throw InvalidArgument("a tanh network needs one more weight than hidden layer");
  require_rank2("frozen_tanh_network", input);
  const std::size_t rows = input.value().rows();
  std::vector<std::size_t> hid, wid;
  for (const Var& h : hidden) {
    same_tape(input, h);
    hid.push_back(h.id());
  }
  for (const Var& w : weights) {
    same_tape(input, w);
    wid.push_back(w.id());
  }
  const std::size_t ii = input.id();
  return tape.record(output.value(), {ii}, [ii, rows, hid = std::move(hid), wid = std::move(wid)](Tape& t, std::size_t self) {
    if (!t.needs_grad(ii)) return;
    DenseArray upstream = t.grad_of(self);
    for (std::size_t layer = wid.size(); layer-- > 0;) {
      const DenseArray& w = t.value_of(wid[layer]);
      const std::size_t out_dim = w.shape()[0], in_dim = w.shape()[1];
      DenseArray down(Shape{rows, in_dim});
      {
        ConstMatrixMap G(upstream.data().data(), rows, out_dim);
        ConstMatrixMap W(w.data().data(), out_dim, in_dim);
        MatrixMap GX(down.data().data(), rows, in_dim);
        GX.noalias() += G * W;
      }
      if (layer > 0) {
        const DenseArray& h = t.value_of(hid[layer - 1]);
        for (std::size_t i = 0; i < down.size(); ++i) down[i] = down[i] * (1.0 - h[i] * h[i]);
      }
      upstream = std::move(down);
    }
    DenseArray& gi = t.grad_slot(ii);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += upstream[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return tape.record(DenseArray::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& v : t.grad_slot(ia).data()) v += g;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty array");
  return sum(a) * (1.0 / static_cast<double>(a.size()));
}

Var sum_rows(const Var& a) {
  require_rank2("sum_rows", a);
  Tape& tape = tape_of(a);
  const DenseArray& av = a.value();
  const std::size_t rows = av.shape()[0], cols = av.shape()[1];
  DenseArray out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += av[r * cols + c];
    out[r] = total;
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, rows, cols](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    DenseArray& ga = t.grad_slot(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r];
  });
}

Var mean_rows(const Var& a) {
  require_rank2("mean_rows", a);
  return sum_rows(a) * (1.0 / static_cast<double>(a.shape()[1]));
}

Var logsumexp(const Var& a) {
  if (a.size() == 0) throw InvalidArgument("logsumexp of an empty array");
  return reshape(logsumexp_rows(reshape(a, Shape{1, a.size()})), Shape{});
}

namespace {

Var reduce_rows_log_exp(const Var& a, bool average, const char* what) {
  require_rank2(what, a);
  Tape& tape = tape_of(a);
  const DenseArray& av = a.value();
  const std::size_t rows = av.shape()[0], cols = av.shape()[1];
  if (cols == 0) throw InvalidArgument(std::string(what) + " of an empty row");
  DenseArray out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = average ? cmvae::log_mean_exp(av.row(r)) : cmvae::logsumexp(av.row(r));
  const double scale = average ? 1.0 / static_cast<double>(cols) : 1.0;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, rows, cols, scale](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    const DenseArray& x = t.value_of(ia);
    const DenseArray& o = t.value_of(self);
    DenseArray& ga = t.grad_slot(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!std::isfinite(o[r])) continue;
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r] * scale * std::exp(x[r * cols + c] - o[r]);
    }
  });
}

}  // namespace

Var logsumexp_rows(const Var& a) { return reduce_rows_log_exp(a, false, "logsumexp_rows"); }

Var log_mean_exp_rows(const Var& a) { return reduce_rows_log_exp(a, true, "log_mean_exp_rows"); }

Var log_mean_exp_rows_dreg(const Var& linear, const Var& squared) {
  require_rank2("log_mean_exp_rows_dreg", squared);
  Tape& tape = same_tape(linear, squared);
  if (linear.shape() != squared.shape()) {
    throw ShapeError("shape mismatch in log_mean_exp_rows_dreg: " + shape_string(linear.shape()) + " vs " +
                     shape_string(squared.shape()));
  }
  const DenseArray& sv = squared.value();
  const std::size_t rows = sv.shape()[0], cols = sv.shape()[1];
  if (cols == 0) throw InvalidArgument("log_mean_exp_rows_dreg of an empty row");
  DenseArray out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = cmvae::log_mean_exp(sv.row(r));
  const double scale = 1.0 / static_cast<double>(cols);
  const std::size_t il = linear.id(), is = squared.id();
  return tape.record(std::move(out), {il, is}, [il, is, rows, cols, scale](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    const DenseArray& x = t.value_of(is);
    const DenseArray& o = t.value_of(self);
    DenseArray* gl = t.needs_grad(il) ? &t.grad_slot(il) : nullptr;
    DenseArray* gs = t.needs_grad(is) ? &t.grad_slot(is) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!std::isfinite(o[r])) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        const double w = scale * std::exp(x[r * cols + c] - o[r]);
        if (gl != nullptr) (*gl)[r * cols + c] += g[r] * w;
        if (gs != nullptr) (*gs)[r * cols + c] += g[r] * w * w;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

Var reshape(const Var& a, Shape shape) {
  Tape& tape = tape_of(a);
  DenseArray out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    DenseArray& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> index) {
  Tape& tape = tape_of(a);
  const DenseArray& av = a.value();
  if (av.rank() == 0) throw ShapeError("gather_rows on a scalar");
  const std::size_t rows = av.rows(), width = av.cols();
  Shape shape = av.shape();
  shape[0] = index.size();
  DenseArray out(shape);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ShapeError("gather index " + std::to_string(index[i]) + " out of range for " +
                       shape_string(av.shape()));
    }
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(index[i] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return tape.record(std::move(out), {ia}, [ia, width, idx = std::move(idx)](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    DenseArray& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t src = i * width, dst = idx[i] * width;
      for (std::size_t c = 0; c < width; ++c) ga[dst + c] += g[src + c];
    }
  });
}

namespace {

void check_row_index(const char* op, std::span<const std::size_t> index, const DenseArray& a) {
  const std::size_t rows = a.rows();
  for (std::size_t i : index) {
    if (i >= rows) {
      throw ShapeError(std::string(op) + ": row " + std::to_string(i) + " out of range for " +
                       shape_string(a.shape()));
    }
  }
}

}  // namespace

Var bernoulli_log_prob_rows(const Var& logits, std::span<const std::size_t> logit_rows, const Var& x,
                            std::span<const std::size_t> x_rows) {
  Tape& tape = same_tape(logits, x);
  require_rank2("bernoulli_log_prob_rows", logits);
  require_rank2("bernoulli_log_prob_rows", x);
  const DenseArray& lv = logits.value();
  const DenseArray& xv = x.value();
  const std::size_t D = lv.cols();
  if (xv.cols() != D || logit_rows.size() != x_rows.size()) {
    throw ShapeError("shape mismatch in bernoulli_log_prob_rows: " + shape_string(lv.shape()) + " vs " +
                     shape_string(xv.shape()));
  }
  check_row_index("bernoulli_log_prob_rows", logit_rows, lv);
  check_row_index("bernoulli_log_prob_rows", x_rows, xv);
  const std::size_t R = logit_rows.size();
  std::vector<double> log_norm(lv.size());
  for (std::size_t i = 0; i < lv.size(); ++i) log_norm[i] = stable_softplus(lv[i]);
  DenseArray out(Shape{R});
  for (std::size_t r = 0; r < R; ++r) {
    const double* l = lv.data().data() + logit_rows[r] * D;
    const double* a = log_norm.data() + logit_rows[r] * D;
    const double* o = xv.data().data() + x_rows[r] * D;
    double total = 0.0;
    for (std::size_t d = 0; d < D; ++d) total += o[d] * l[d] - a[d];
    out[r] = total;
  }
  const std::size_t il = logits.id(), ix = x.id();
  std::vector<std::size_t> lr(logit_rows.begin(), logit_rows.end()), xr(x_rows.begin(), x_rows.end());
  return tape.record(std::move(out), {il, ix}, [il, ix, D, lr = std::move(lr), xr = std::move(xr)](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    const double* lv = t.value_of(il).data().data();
    const double* xv = t.value_of(ix).data().data();
    double* gl = t.needs_grad(il) ? t.grad_slot(il).data().data() : nullptr;
    double* gx = t.needs_grad(ix) ? t.grad_slot(ix).data().data() : nullptr;
    std::vector<double> prob;
    if (gl != nullptr) {
      const DenseArray& logits = t.value_of(il);
      prob.resize(logits.size());
      for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = stable_sigmoid(logits[i]);
    }
    for (std::size_t r = 0; r < lr.size(); ++r) {
      const double* l = lv + lr[r] * D;
      const double* o = xv + xr[r] * D;
      if (gl != nullptr) {
        double* dst = gl + lr[r] * D;
        const double* pr = prob.data() + lr[r] * D;
        for (std::size_t d = 0; d < D; ++d) dst[d] += g[r] * (o[d] - pr[d]);
      }
      if (gx != nullptr) {
        double* dst = gx + xr[r] * D;
        for (std::size_t d = 0; d < D; ++d) dst[d] += g[r] * l[d];
      }
    }
  });
}

Var gaussian_log_prob_rows(const Var& mean, std::span<const std::size_t> mean_rows, const Var& log_var, const Var& x,
                           std::span<const std::size_t> x_rows) {
  Tape& tape = same_tape(mean, x);
  same_tape(mean, log_var);
  require_rank2("gaussian_log_prob_rows", mean);
  require_rank2("gaussian_log_prob_rows", x);
  const DenseArray& mv = mean.value();
  const DenseArray& vv = log_var.value();
  const DenseArray& xv = x.value();
  const std::size_t D = mv.cols();
  const bool shared = vv.rank() == 1;
  if (xv.cols() != D || mean_rows.size() != x_rows.size() || (shared ? vv.size() != D : vv.shape() != mv.shape())) {
    throw ShapeError("shape mismatch in gaussian_log_prob_rows: " + shape_string(mv.shape()) + ", " +
                     shape_string(vv.shape()) + " vs " + shape_string(xv.shape()));
  }
  check_row_index("gaussian_log_prob_rows", mean_rows, mv);
  check_row_index("gaussian_log_prob_rows", x_rows, xv);
  const std::size_t R = mean_rows.size();
  std::vector<double> precision(vv.size());
  for (std::size_t i = 0; i < vv.size(); ++i) precision[i] = std::exp(-vv[i]);
  DenseArray out(Shape{R});
  for (std::size_t r = 0; r < R; ++r) {
    const double* mu = mv.data().data() + mean_rows[r] * D;
    const std::size_t vo = shared ? 0 : mean_rows[r] * D;
    const double* lvar = vv.data().data() + vo;
    const double* prec = precision.data() + vo;
    const double* o = xv.data().data() + x_rows[r] * D;
    double total = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double c = o[d] - mu[d];
      total += lvar[d] + c * c * prec[d] + kLog2Pi;
    }
    out[r] = -0.5 * total;
  }
  const std::size_t im = mean.id(), iv = log_var.id(), ix = x.id();
  std::vector<std::size_t> mr(mean_rows.begin(), mean_rows.end()), xr(x_rows.begin(), x_rows.end());
  return tape.record(std::move(out), {im, iv, ix},
                     [im, iv, ix, D, shared, mr = std::move(mr), xr = std::move(xr)](Tape& t, std::size_t self) {
                       const DenseArray& g = t.grad_of(self);
                       const double* mv = t.value_of(im).data().data();
                       const double* xv = t.value_of(ix).data().data();
                       double* gm = t.needs_grad(im) ? t.grad_slot(im).data().data() : nullptr;
                       double* gv = t.needs_grad(iv) ? t.grad_slot(iv).data().data() : nullptr;
                       double* gx = t.needs_grad(ix) ? t.grad_slot(ix).data().data() : nullptr;
                       const DenseArray& log_var = t.value_of(iv);
                       std::vector<double> precision(log_var.size());
                       for (std::size_t i = 0; i < precision.size(); ++i) precision[i] = std::exp(-log_var[i]);
                       for (std::size_t r = 0; r < mr.size(); ++r) {
                         const std::size_t mo = mr[r] * D, vo = shared ? 0 : mr[r] * D, xo = xr[r] * D;
                         for (std::size_t d = 0; d < D; ++d) {
                           const double c = xv[xo + d] - mv[mo + d];
                           const double prec = precision[vo + d];
                           const double dx = -g[r] * c * prec;
                           if (gm != nullptr) gm[mo + d] -= dx;
                           if (gx != nullptr) gx[xo + d] += dx;
                           if (gv != nullptr) gv[vo + d] += -0.5 * g[r] * (1.0 - c * c * prec);
                         }
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols of no arrays");
  Tape& tape = tape_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const DenseArray& v = p.value();
    if (v.rank() < 1 || v.rank() > 2 || v.rows() != rows) {
      throw ShapeError("shape mismatch in concat_cols: " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(v.shape()));
    }
    widths.push_back(v.cols());
    ids.push_back(p.id());
    total += v.cols();
  }
  DenseArray out(Shape{rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const DenseArray& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + offset + c] = v[r * widths[k] + c];
    offset += widths[k];
  }
  std::vector<std::size_t> parents = ids;
  return tape.record(std::move(out), std::move(parents),
                     [ids, widths, rows, total](Tape& t, std::size_t self) {
                       const DenseArray& g = t.grad_of(self);
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.needs_grad(ids[k])) {
                           DenseArray& gp = t.grad_slot(ids[k]);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < widths[k]; ++c)
                               gp[r * widths[k] + c] += g[r * total + offset + c];
                         }
                         offset += widths[k];
                       }
                     });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows of no arrays");
  Tape& tape = tape_of(parts[0]);
  const Shape& first = parts[0].shape();
  if (first.empty()) throw ShapeError("concat_rows of scalars");
  Shape trailing(first.begin() + 1, first.end());
  std::vector<std::size_t> ids, sizes;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Shape& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != trailing) {
      throw ShapeError("shape mismatch in concat_rows: " + shape_string(first) + " vs " + shape_string(s));
    }
    rows += s[0];
    ids.push_back(p.id());
    sizes.push_back(p.size());
  }
  Shape shape = first;
  shape[0] = rows;
  DenseArray out(shape);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  std::vector<std::size_t> parents = ids;
  return tape.record(std::move(out), std::move(parents), [ids, sizes](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        DenseArray& gp = t.grad_slot(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += g[offset + i];
      }
      offset += sizes[k];
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_rank2("slice_cols", a);
  Tape& tape = tape_of(a);
  const DenseArray& av = a.value();
  const std::size_t rows = av.shape()[0], cols = av.shape()[1];
  if (begin > end || end > cols) {
    throw ShapeError("column slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_string(av.shape()));
  }
  const std::size_t width = end - begin;
  DenseArray out(Shape{rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = av[r * cols + begin + c];
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, rows, cols, begin, width](Tape& t, std::size_t self) {
    const DenseArray& g = t.grad_of(self);
    DenseArray& ga = t.grad_slot(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) ga[r * cols + begin + c] += g[r * width + c];
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

std::vector<DenseArray> gradients(const GraphFunction& f, std::span<const DenseArray> params) {
  Tape tape(true);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const DenseArray& p : params) vars.push_back(tape.variable(p));
  Var loss = f(tape, vars);
  tape.backward(loss);
  std::vector<DenseArray> grads;
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(tape.gradient(v));
  return grads;
}

double finite_difference_check(const GraphFunction& f, std::span<const DenseArray> params, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  const std::vector<DenseArray> grads = gradients(f, params);
  std::vector<DenseArray> probe(params.begin(), params.end());
  auto evaluate = [&]() {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(probe.size());
    for (const DenseArray& p : probe) vars.push_back(tape.constant(p));
    const double value = f(tape, vars).item();
    if (!std::isfinite(value)) throw NumericalError("non-finite function value in finite-difference check");
    return value;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      probe[k][i] = saved + h;
      const double up = evaluate();
      probe[k][i] = saved - h;
      const double down = evaluate();
      probe[k][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[k][i];
      worst = std::max(worst, std::abs(numeric - analytic) / (std::abs(analytic) + 1e-8));
    }
  }
  return worst;
}

}  // namespace cmvae
