#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmvae/estimators.hpp"

namespace cmvae {

enum class ObjectiveVariant { Baseline, ContrastiveIwae, ContrastiveCubo };

std::string to_string(ObjectiveVariant variant);
/// Accepts "baseline", "cI" and "cC".
ObjectiveVariant parse_objective_variant(std::string_view text);

inline constexpr double kBaselineGamma = std::numeric_limits<double>::infinity();

struct ObjectiveConfig {
  double gamma = 2.0;
  std::size_t num_negatives = 5;
  EstimatorSpec term1{BoundKind::Iwae, 30, GradientKind::DoublyReparameterized};
  EstimatorSpec term2{BoundKind::Iwae, 30, GradientKind::DoublyReparameterized};
  ObjectiveVariant variant = ObjectiveVariant::ContrastiveIwae;

  /// Baseline: ELBO only with gamma = inf. cI / cC: IWAE first term and an
  /// IWAE / CUBO second term, all with `samples` draws. IWAE terms use
  /// doubly reparameterized gradients.
  static ObjectiveConfig for_variant(ObjectiveVariant variant, double gamma = 2.0, std::size_t negatives = 5,
                                     std::size_t samples = 30);

  bool baseline() const { return variant == ObjectiveVariant::Baseline || std::isinf(gamma); }
  void validate() const;
};

/// For every modality m, anchor i and slot n: the item of modality m that
/// replaces the anchor's own in the n-th negative pair. Indices refer to
/// batch rows and never equal the anchor.
struct NegativeSet {
  std::vector<std::vector<std::vector<std::size_t>>> index;  // [M][B][N]

  std::size_t modalities() const { return index.size(); }
  std::size_t batch_size() const { return index.empty() ? 0 : index[0].size(); }
  std::size_t num_negatives() const { return batch_size() == 0 ? 0 : index[0][0].size(); }
};

/// Uniform draws without replacement from the other batch items; modality
/// m and anchor i use a stream derived from (seed, m, i).
NegativeSet draw_negatives(std::size_t batch_size, std::size_t modalities, std::size_t num_negatives,
                           std::uint64_t seed);

/// Rows of this matrix select the items of each modality that form one
/// random tuple: entry [m][n] is the row of modality m in tuple n.
struct IndexMatrix {
  std::vector<std::vector<std::size_t>> index;  // [M][N]

  std::size_t modalities() const { return index.size(); }
  std::size_t columns() const { return index.empty() ? 0 : index[0].size(); }
};

/// Uniform entries in [0, batch_size).
IndexMatrix draw_index_matrix(std::size_t batch_size, std::size_t modalities, std::size_t columns,
                              std::uint64_t seed);

struct ObjectiveTerms {
  Var loss;
  /// Batch mean of the first-term estimate of log p(tuple).
  double term1 = 0.0;
  /// Batch mean of the averaged logsumexp over negatives (NaN for baseline).
  double term2 = 0.0;
};

/// -gamma * pos + mean over blocks of logsumexp over the negatives, averaged
/// over anchors. `pos` is [B]; every block is [B, N].
Var assemble_final_loss(const Var& positives, std::span<const Var> negative_blocks, double gamma);
double assemble_final_loss(std::span<const double> positives,
                           std::span<const std::vector<std::vector<double>>> negative_blocks, double gamma);

/// -log-likelihood (baseline) or the symmetrized contrastive loss of a batch:
/// each modality's negatives form one block, averaged over modalities.
ObjectiveTerms final_objective(const ModelGraph& graph, std::span<const Var> obs, const NegativeSet& negatives,
                               const ObjectiveConfig& config, std::uint64_t seed,
                               EvaluationCounter* counter = nullptr);

/// Contrastive loss that scores N random tuples per anchor, so the number of
/// joint estimates is N + 1 per anchor whatever the number of modalities.
/// `tuples` holds one matrix shared by every anchor, or one per anchor.
ObjectiveTerms multimodal_objective(const ModelGraph& graph, std::span<const Var> obs,
                                    std::span<const IndexMatrix> tuples, const ObjectiveConfig& config,
                                    std::uint64_t seed, EvaluationCounter* counter = nullptr);

}  // namespace cmvae
