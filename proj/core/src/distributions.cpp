#include "cmvae/distributions.hpp"

#include <limits>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"

namespace cmvae {

namespace {

Var reduce_last(const Var& per_coordinate) {
  if (per_coordinate.value().rank() == 2) return sum_rows(per_coordinate);
  return sum(per_coordinate);
}

void require_same_shape(const char* what, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string("dimension mismatch in ") + what + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

std::size_t DiagonalGaussian::dim() const {
  const Shape& s = mean.shape();
  return s.empty() ? 1 : s.back();
}

DiagonalGaussian DiagonalGaussian::gather(std::span<const std::size_t> rows) const {
  return {gather_rows(mean, rows), gather_rows(log_var, rows)};
}

Var gaussian_log_prob(const DiagonalGaussian& d, const Var& value) {
  require_same_shape("gaussian_log_prob", d.mean, value);
  require_same_shape("gaussian_log_prob", d.mean, d.log_var);
  Var centered = value - d.mean;
  Var per = (d.log_var + square(centered) * exp(-d.log_var) + kLog2Pi) * -0.5;
  return reduce_last(per);
}

Var standard_normal_log_prob(const Var& value) { return reduce_last((square(value) + kLog2Pi) * -0.5); }

Var rsample(const DiagonalGaussian& d, const Var& noise) {
  require_same_shape("rsample", d.mean, noise);
  return d.mean + exp(d.log_var * 0.5) * noise;
}

DiagonalGaussian gaussian_product(std::span<const DiagonalGaussian> components, bool include_standard_prior) {
  if (components.empty()) {
    throw InvalidArgument("gaussian_product needs at least one component besides the prior");
  }
  const DiagonalGaussian& first = components.front();
  for (const DiagonalGaussian& c : components) {
    require_same_shape("gaussian_product", first.mean, c.mean);
    require_same_shape("gaussian_product", first.mean, c.log_var);
  }
  Var precision = exp(-first.log_var);
  Var weighted = precision * first.mean;
  for (std::size_t i = 1; i < components.size(); ++i) {
    Var p = exp(-components[i].log_var);
    precision = precision + p;
    weighted = weighted + p * components[i].mean;
  }
  if (include_standard_prior) precision = precision + 1.0;
  return {weighted / precision, -log(precision)};
}

FactorBernoulli FactorBernoulli::from_logits(const Var& raw) { return {clamp(raw, -kLogitClamp, kLogitClamp)}; }

Var FactorBernoulli::log_prob(const Var& x) const {
  require_same_shape("bernoulli log_prob", logits, x);
  return reduce_last(x * logits - softplus(logits));
}

Var FactorBernoulli::mean() const { return sigmoid(logits); }

ObservationLikelihood ObservationLikelihood::bernoulli(const Var& raw_logits) {
  return {LikelihoodKind::Bernoulli, FactorBernoulli::from_logits(raw_logits).logits, Var()};
}

ObservationLikelihood ObservationLikelihood::gaussian(const Var& mean, const Var& raw_log_var) {
  return {LikelihoodKind::Gaussian, mean, clamp(raw_log_var, kLogVarFloor, std::numeric_limits<double>::max())};
}

Var ObservationLikelihood::log_prob(const Var& x) const {
  if (kind == LikelihoodKind::Bernoulli) return FactorBernoulli{location}.log_prob(x);
  require_same_shape("gaussian likelihood", location, x);
  Var centered = x - location;
  Var per = (log_var + square(centered) * exp(-log_var) + kLog2Pi) * -0.5;
  return reduce_last(per);
}

Var ObservationLikelihood::log_prob_rows(std::span<const std::size_t> rows, const Var& x,
                                         std::span<const std::size_t> x_rows) const {
  if (kind == LikelihoodKind::Bernoulli) return bernoulli_log_prob_rows(location, rows, x, x_rows);
  return gaussian_log_prob_rows(location, rows, log_var, x, x_rows);
}

Var ObservationLikelihood::mean() const {
  if (kind == LikelihoodKind::Bernoulli) return sigmoid(location);
  return location;
}

ObservationLikelihood ObservationLikelihood::gather(std::span<const std::size_t> rows) const {
  return {kind, gather_rows(location, rows), log_var};
}

}  // namespace cmvae
