#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmvae/model.hpp"

namespace cmvae {

enum class BoundKind { Elbo, Iwae, Cubo };

std::string to_string(BoundKind kind);
BoundKind parse_bound_kind(std::string_view text);

/// How an IWAE estimate passes gradients to the encoders. Reparameterized
/// differentiates the estimate itself. Doubly reparameterized (IWAE only)
/// drops the score term of log q and weights the draw path by the squared
/// normalized importance weights; the value is unchanged.
enum class GradientKind { Reparameterized, DoublyReparameterized };

std::string to_string(GradientKind kind);
GradientKind parse_gradient_kind(std::string_view text);

struct EstimatorSpec {
  BoundKind kind = BoundKind::Iwae;
  std::size_t samples = 30;
  GradientKind gradient = GradientKind::Reparameterized;

  void validate() const;
  friend bool operator==(const EstimatorSpec&, const EstimatorSpec&) = default;
};

/// Number of joint-estimator invocations (tuples estimated) and calls.
struct EvaluationCounter {
  std::size_t tuples = 0;
  std::size_t calls = 0;
};

/// Latent draws per tuple an estimator needs. The mixture family takes the
/// ELBO's samples from every component, so it needs samples * M draws.
std::size_t draws_for(const MultimodalModel& model, const EstimatorSpec& spec);

/// log p(z) + sum_m log p(x_m | z) - log q(z | tuple) for `draws` latent
/// draws per tuple. Shape [P, draws].
Var joint_log_weights(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples, std::size_t draws,
                      std::uint64_t seed);

/// The same weights along two gradient paths: `decoder` reaches only the
/// decoder parameters (draws held fixed), `latent` only the draws (decoder
/// and posterior parameters held fixed).
struct SplitLogWeights {
  Var decoder;
  Var latent;
};

SplitLogWeights joint_log_weights_split(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                                        std::size_t draws, std::uint64_t seed);

/// Stratified IWAE reduction of split weights with doubly reparameterized gradients.
Var reduce_log_weights_dreg(const SplitLogWeights& log_weights, std::size_t strata = 1);

/// ELBO: row mean. IWAE: log mean exp. CUBO: half the log mean of exp(2 w).
/// With `strata` > 1 every row holds that many equal contiguous groups of
/// draws (one per mixture component); each group is reduced on its own and
/// the results are averaged.
Var reduce_log_weights(const Var& log_weights, BoundKind kind, std::size_t strata = 1);
double reduce_log_weights(std::span<const double> log_weights, BoundKind kind, std::size_t strata = 1);
/// Groups reduce_log_weights uses for a model: one per modality for the
/// mixture family, otherwise one.
std::size_t weight_strata(const MultimodalModel& model);

/// Per-tuple estimate of log p(tuple), shape [P].
Var joint_estimate(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                   const EstimatorSpec& spec, std::uint64_t seed, EvaluationCounter* counter = nullptr);

/// IWAE estimate of log p(x_m) per row, with q(z | x_m) as proposal.
Var unimodal_marginal(const ModelGraph& graph, std::size_t modality, const Var& obs, std::size_t samples,
                      std::uint64_t seed);

// Value-level, one estimate per item (rows of obs aligned across modalities).
std::vector<double> joint_estimate(const MultimodalModel& model, std::span<const DenseArray> obs,
                                   const EstimatorSpec& spec, std::uint64_t seed);
std::vector<double> elbo(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                         std::uint64_t seed);
std::vector<double> iwae(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                         std::uint64_t seed);
std::vector<double> cubo(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                         std::uint64_t seed);
std::vector<double> unimodal_marginal(const MultimodalModel& model, std::size_t modality, const DenseArray& obs,
                                      std::size_t samples, std::uint64_t seed);

}  // namespace cmvae
