#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmvae/model.hpp"
#include "cmvae/synthetic.hpp"

namespace cmvae {

struct EvaluationConfig {
  std::size_t test_items = 500;
  std::size_t joint_samples = 1000;
  std::size_t pmi_samples = 30;
  double ridge = 1e-3;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;
};

/// Held-out data and the oracle classifiers every metric is scored with.
struct EvaluationData {
  std::vector<OracleClassifier> oracles;
  /// Fresh unimodal pools, each anchor paired with one same-class partner.
  PairedDataset related;
  /// The same pools paired at random.
  PairedDataset mixed;

  static EvaluationData build(const FactorGenerator& gen, std::size_t items, std::uint64_t seed);
};

struct Metrics {
  double latent_acc_m1 = 0.0;
  double latent_acc_m2 = 0.0;
  double joint_coh = 0.0;
  double cross_coh_12 = 0.0;
  double cross_coh_21 = 0.0;
  std::optional<double> synergy_coh;
  double mean_pmi_related = 0.0;
  double mean_pmi_unrelated = 0.0;
};

/// Held-out accuracy (percent) of a one-vs-rest ridge regression on one-hot
/// targets with a bias column, after a seeded train/test split.
double ridge_classifier_accuracy(const DenseArray& features, std::span<const std::size_t> labels,
                                 std::size_t num_classes, double ridge, double train_fraction,
                                 std::uint64_t split_seed);

/// One draw from q(z | x_m) per item, scored by ridge_classifier_accuracy.
double latent_accuracy(const MultimodalModel& model, std::size_t modality, const DenseArray& obs,
                       std::span<const std::size_t> labels, std::size_t num_classes, const EvaluationConfig& config,
                       std::uint64_t seed);

/// Percent of prior generations whose oracle classes agree in all modalities.
double joint_coherence(const MultimodalModel& model, std::size_t n, std::span<const OracleClassifier> oracles,
                       std::uint64_t seed);

/// Percent of cross generations classified as the source item's class.
double cross_coherence(const MultimodalModel& model, std::size_t source, std::size_t target, const DenseArray& obs,
                       std::span<const std::size_t> labels, const OracleClassifier& target_oracle,
                       std::uint64_t seed);

/// Percent of items whose joint-posterior reconstructions are classified as
/// the true class in every modality. Undefined for the mixture family.
double synergy_coherence(const MultimodalModel& model, std::span<const DenseArray> obs,
                         std::span<const std::size_t> labels, std::span<const OracleClassifier> oracles,
                         std::uint64_t seed);

Metrics evaluate(const MultimodalModel& model, const EvaluationData& data, const EvaluationConfig& config,
                 std::uint64_t seed);

inline constexpr int kMetricsSchemaVersion = 1;
/// Schema comment line followed by the column header.
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const std::string& run_id, std::size_t step, const Metrics& m);
/// Shortest round-trip decimal form.
std::string format_number(double v);

}  // namespace cmvae
