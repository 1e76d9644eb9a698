#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmvae/evaluation.hpp"
#include "cmvae/linear_gaussian.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/relatedness.hpp"
#include "cmvae/run_config.hpp"
#include "cmvae/training.hpp"

namespace cmvae {

struct ExperimentData {
  FactorGenerator generator;
  /// Full unimodal training pools before any subsetting.
  std::vector<UnimodalPool> pools;
  /// Related pairs built from `dataset.percent` of every pool.
  PairedDataset train;
  EvaluationData evaluation;
};

ExperimentData build_experiment_data(const RunConfig& config);

std::map<std::string, double> metrics_map(const Metrics& m);

struct TrainingResult {
  std::vector<StepRecord> log;
  std::vector<std::pair<std::size_t, Metrics>> evaluations;
};

/// Where a run writes metrics.csv, train_log.csv, checkpoints and the
/// resolved config. Without it nothing is written.
struct RunOutput {
  std::filesystem::path directory;
};

/// Trains `state` for `steps` more steps, evaluating every `eval_every`
/// steps and after the last one when `evaluation` is given. On a numerical
/// failure the last good state is saved (when writing) and a NumericalError
/// naming it is thrown.
TrainingResult run_training(TrainState& state, const PairedDataset& train, const EvaluationData* evaluation,
                            const RunConfig& config, std::size_t steps, const RunOutput* output);

/// Mean IWAE estimate of log p over held-out related pairs.
double mean_test_log_likelihood(const MultimodalModel& model, const EvaluationData& data, std::size_t samples,
                                std::uint64_t seed);

struct SweepRow {
  std::string run_id;
  std::string variant;
  double gamma = 0.0;
  double percent = 0.0;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  Metrics metrics;
  double test_log_likelihood = 0.0;
};

void write_sweep_header(std::ostream& out);
void write_sweep_row(std::ostream& out, const SweepRow& row);

/// Replicate r shifts both the run seed and the dataset seed by r, so runs
/// with the same replicate index share data and initialisation.
RunConfig replicate_config(const RunConfig& base, std::size_t replicate);

/// One run per (replicate, gamma); rows are also streamed to `csv` if given.
std::vector<SweepRow> sweep_gamma(const RunConfig& base, std::span<const double> gammas, std::size_t replicates,
                                  std::ostream* csv);
/// One run per (replicate, percent, variant).
std::vector<SweepRow> sweep_data(const RunConfig& base, std::span<const double> percents,
                                 std::span<const ObjectiveVariant> variants, std::size_t replicates,
                                 std::ostream* csv);

struct PipelineResult {
  PropagationReport report;
  ThresholdEstimate threshold;
  std::size_t mixed_pairs = 0;
  std::size_t propagated_pairs = 0;
  Metrics before;
  Metrics after;
  /// Same continued training on the pretraining pairs alone.
  std::optional<Metrics> control;
};

/// Pretrain on `pretrain_percent` of the related data, fit the PMI threshold
/// on random pairings of those items, flag related pairs among random
/// pairings of the remaining items, then continue training on both.
/// A failing stage is rethrown with the stage name prefixed.
PipelineResult run_pipeline(const RunConfig& config, bool with_control);

struct SandwichReport {
  std::size_t items = 0;
  MeanAndError elbo, iwae1, iwae5, iwae30, exact, cubo30;
  // Paired per-item differences.
  MeanAndError iwae30_minus_elbo, exact_minus_iwae30, cubo30_minus_exact;
  MeanAndError iwae5_minus_iwae1, iwae30_minus_iwae5;
  /// Largest per-item deviation from the exact value with the exact encoder.
  double tight_elbo_error = 0.0;
  double tight_cubo_error = 0.0;

  bool sandwich_holds(double standard_errors = 3.0) const;
  bool iwae_monotone(double standard_errors = 3.0) const;
};

/// Oracle with two 3-D modalities over a 2-D latent, orthogonal loadings.
LinearGaussianOracle sandwich_oracle();
inline constexpr LinearGaussianOracle::Perturbation kSandwichPerturbation{0.8, 0.6};
SandwichReport oracle_sandwich(std::size_t items, std::uint64_t seed);

}  // namespace cmvae
