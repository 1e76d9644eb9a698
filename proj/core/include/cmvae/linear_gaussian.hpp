#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmvae/dense_array.hpp"
#include "cmvae/model.hpp"

namespace cmvae {

/// z ~ N(0, I_L); x_m = A_m z + N(0, noise_var_m I) for every modality m.
/// Marginals, joints and posteriors are Gaussian and available in closed form.
class LinearGaussianOracle {
 public:
  LinearGaussianOracle(std::vector<DenseArray> loadings, std::vector<double> noise_var);

  /// Two 1-D modalities sharing one latent, with unit noise and loadings
  /// chosen so the observations have the given correlation.
  static LinearGaussianOracle bivariate(double correlation);

  std::size_t latent_dim() const { return latent_; }
  std::size_t num_modalities() const { return loadings_.size(); }
  std::size_t obs_dim(std::size_t modality) const { return loadings_.at(modality).rows(); }
  const DenseArray& loading(std::size_t modality) const { return loadings_.at(modality); }
  double noise_var(std::size_t modality) const { return noise_var_.at(modality); }

  /// Covariance of the concatenated observations (modality order).
  DenseArray joint_covariance() const;

  /// log p(x_1, ..., x_M) per item; rows aligned across modalities.
  std::vector<double> log_joint(std::span<const DenseArray> obs) const;
  std::vector<double> log_marginal(std::size_t modality, const DenseArray& obs) const;
  /// log p(x, y) - log p(x) - log p(y) for two-modality oracles.
  std::vector<double> pmi(std::span<const DenseArray> obs) const;

  /// Item-aligned draws, one [n, D_m] array per modality.
  std::vector<DenseArray> sample(std::size_t n, std::uint64_t seed) const;

  struct Perturbation {
    double mean_shift = 0.0;
    double log_var_shift = 0.0;
  };

  /// Model with affine networks reproducing this generative process exactly,
  /// with exact joint and unimodal posteriors, optionally perturbed in the
  /// joint encoder. Needs diagonal posterior covariances (orthogonal
  /// loading columns); throws InvalidArgument otherwise.
  MultimodalModel exact_model(Perturbation perturbation) const;
  MultimodalModel exact_model() const { return exact_model(Perturbation{}); }

 private:
  std::vector<double> log_density(const DenseArray& cov, const DenseArray& obs) const;

  std::vector<DenseArray> loadings_;
  std::vector<double> noise_var_;
  std::size_t latent_ = 0;
};

}  // namespace cmvae
