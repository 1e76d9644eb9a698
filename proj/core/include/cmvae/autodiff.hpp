#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "cmvae/dense_array.hpp"

namespace cmvae {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const DenseArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of a computation. Nodes are created in topological
/// order, so the backward pass is a single reverse sweep that visits every
/// node once. A tape built with `record_gradients = false` stores values only.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseArray value);
  Var variable(DenseArray value);

  /// Populates gradients of `loss` (which must hold one element) with
  /// respect to every node. Nodes the loss does not depend on get zeros.
  void backward(const Var& loss);

  /// Gradient of the last backward pass; zeros when never reached.
  DenseArray gradient(const Var& v) const;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Op-construction interface.
  Var record(DenseArray value, std::vector<std::size_t> parents, Backprop backprop);
  const DenseArray& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const DenseArray& grad_of(std::size_t id) const { return nodes_[id].grad; }
  /// Mutable gradient slot of `id`, allocated (zero-filled) on first use.
  DenseArray& grad_slot(std::size_t id);
  void check_owned(const Var& v) const;

 private:
  struct Node {
    DenseArray value;
    DenseArray grad;
    std::vector<std::size_t> parents;
    Backprop backprop;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  bool record_;
};

// Elementwise arithmetic. Operands must have equal shapes, or one operand's
// shape must equal the other's without its leading (batch) extent, or one
// operand must be a rank-0 scalar.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double c);
Var operator+(double c, const Var& a);
Var operator-(const Var& a, double c);
Var operator-(double c, const Var& a);
Var operator*(const Var& a, double c);
Var operator*(double c, const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);
/// Clamps into [lo, hi]; the gradient is zero where the bound is active.
Var clamp(const Var& a, double lo, double hi);

/// x[B,in] (or x[in]) times W[out,in]^T plus b[out].
Var affine(const Var& x, const Var& weight, const Var& bias);
/// Re-attaches `output`, a tanh network already evaluated on a constant copy
/// of `input`, to `input` with the weights held constant. `hidden` are the
/// tanh layer outputs and `weights` the affine weights, in layer order. The
/// gradient reaches `input` only.
Var frozen_tanh_network(const Var& input, const Var& output, std::span<const Var> hidden, std::span<const Var> weights);

Var sum(const Var& a);
Var mean(const Var& a);
/// Reduces every row of a rank-2 array: [B,D] -> [B].
Var sum_rows(const Var& a);
Var mean_rows(const Var& a);
/// Stable log-sum-exp of all entries -> scalar.
Var logsumexp(const Var& a);
/// Stable log-sum-exp of every row: [B,K] -> [B].
Var logsumexp_rows(const Var& a);
/// log of the row mean of exp: [B,K] -> [B]. Constant rows map to that constant exactly.
Var log_mean_exp_rows(const Var& a);
/// Row log-mean-exp of `squared` whose gradient reaches `linear` with the
/// normalized weights w and `squared` with w^2. Both inputs must hold the
/// same values; used for doubly reparameterized importance-weighted gradients.
Var log_mean_exp_rows_dreg(const Var& linear, const Var& squared);

Var reshape(const Var& a, Shape shape);
/// Selects leading-extent slices (rows of a matrix, entries of a vector).
Var gather_rows(const Var& a, std::span<const std::size_t> index);
/// Row r is the summed Bernoulli log-mass of x row `x_rows[r]` under logits
/// row `logit_rows[r]`. Equivalent to gathering both and reducing, without
/// materializing the gathered arrays.
Var bernoulli_log_prob_rows(const Var& logits, std::span<const std::size_t> logit_rows, const Var& x,
                            std::span<const std::size_t> x_rows);
/// Gaussian counterpart. A rank-1 `log_var` is shared by every row, a rank-2
/// one is gathered with `mean_rows`.
Var gaussian_log_prob_rows(const Var& mean, std::span<const std::size_t> mean_rows, const Var& log_var, const Var& x,
                           std::span<const std::size_t> x_rows);
/// Joins rank-1 ([B], treated as [B,1]) or rank-2 ([B,Di]) arrays column-wise.
Var concat_cols(std::span<const Var> parts);
/// Stacks arrays with equal trailing extents along the leading extent.
Var concat_rows(std::span<const Var> parts);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);

/// Function from parameter variables to a scalar, re-evaluable on any tape.
using GraphFunction = std::function<Var(Tape&, std::span<const Var> params)>;

/// Gradients of `f` at `params` via one backward pass.
std::vector<DenseArray> gradients(const GraphFunction& f, std::span<const DenseArray> params);

/// Maximum over all parameter entries of
/// |(f(p+h) - f(p-h)) / 2h - grad| / (|grad| + 1e-8), with `grad` taken from
/// the backward pass. Throws NumericalError if any evaluation is non-finite.
double finite_difference_check(const GraphFunction& f, std::span<const DenseArray> params, double h);

}  // namespace cmvae
