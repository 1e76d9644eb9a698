#pragma once

#include <span>
#include <vector>

#include "cmvae/autodiff.hpp"

namespace cmvae {

/// Factorized Gaussian with mean and log-variance of shape [dim] or [batch, dim].
struct DiagonalGaussian {
  Var mean;
  Var log_var;

  std::size_t dim() const;
  DiagonalGaussian gather(std::span<const std::size_t> rows) const;
};

/// Sum over the last axis of the per-coordinate Gaussian log-density.
/// Rank-1 parameters give a scalar, rank-2 parameters one value per row.
Var gaussian_log_prob(const DiagonalGaussian& d, const Var& value);
/// log N(value; 0, I), same reduction rule as gaussian_log_prob.
Var standard_normal_log_prob(const Var& value);

/// Reparameterized draw mean + exp(log_var / 2) * noise.
Var rsample(const DiagonalGaussian& d, const Var& noise);

/// Precision-weighted product of experts, optionally with N(0, I) as an
/// extra expert. Components are combined in the order given.
DiagonalGaussian gaussian_product(std::span<const DiagonalGaussian> components, bool include_standard_prior);

enum class LikelihoodKind { Bernoulli, Gaussian };

inline constexpr double kLogitClamp = 15.0;
inline constexpr double kLogVarFloor = -6.0;

/// Independent Bernoulli coordinates parameterized by logits clamped to
/// [-15, 15], so probabilities stay strictly inside (0, 1).
struct FactorBernoulli {
  Var logits;

  static FactorBernoulli from_logits(const Var& raw);
  Var log_prob(const Var& x) const;
  Var mean() const;
};

/// Decoder output for one modality: Bernoulli logits, or a Gaussian mean with
/// a per-coordinate log-variance (floored at -6) shared across rows.
struct ObservationLikelihood {
  LikelihoodKind kind = LikelihoodKind::Bernoulli;
  Var location;
  Var log_var;

  static ObservationLikelihood bernoulli(const Var& raw_logits);
  static ObservationLikelihood gaussian(const Var& mean, const Var& raw_log_var);

  Var log_prob(const Var& x) const;
  /// log_prob(x[x_rows]) under the parameters at `rows`, one value per row.
  Var log_prob_rows(std::span<const std::size_t> rows, const Var& x, std::span<const std::size_t> x_rows) const;
  Var mean() const;
  ObservationLikelihood gather(std::span<const std::size_t> rows) const;
};

}  // namespace cmvae
