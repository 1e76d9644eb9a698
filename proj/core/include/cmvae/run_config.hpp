#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "cmvae/evaluation.hpp"
#include "cmvae/model.hpp"
#include "cmvae/objective.hpp"
#include "cmvae/relatedness.hpp"
#include "cmvae/synthetic.hpp"

namespace cmvae {

struct DatasetConfig {
  FactorSpec factors = FactorSpec::defaults();
  std::size_t items = 2000;
  std::size_t pairs_per_instance = 30;
  /// Percent of each unimodal pool used for training.
  double percent = 100.0;
  /// Seeds the pools, pairings and held-out data; the mixing maps use factors.seed.
  std::uint64_t seed = 1;
};

struct ModelConfig {
  JointKind joint_kind = JointKind::MixtureOfExperts;
  ArchitectureSpec architecture;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t steps = 5000;
  std::size_t batch_size = 64;
};

struct PropagationConfig {
  double pretrain_percent = 10.0;
  std::size_t pmi_samples = 30;
  ThresholdRule threshold_rule = ThresholdRule::MaxF1;
  bool continue_training = true;
  /// Steps of continued training after propagation.
  std::size_t continue_steps = 1000;
  /// Random pairings of the leftover items that form the mixed set.
  std::size_t mixed_rounds = 10;
};

struct RunConfig {
  std::string run_id = "run";
  /// Seeds initialisation, batches, negatives, estimator noise and evaluation.
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  ModelConfig model;
  ObjectiveConfig objective;
  OptimizerConfig optimizer;
  EvaluationConfig evaluation;
  PropagationConfig propagation;
  std::size_t eval_every = 500;
  /// 0 disables periodic checkpoints; the final state is always saved.
  std::size_t checkpoint_every = 0;
  std::string output_dir = "runs";

  void validate() const;
};

/// Parses a JSON document; absent keys keep their defaults, unknown keys
/// and malformed values throw ConfigError.
RunConfig run_config_from_json(std::string_view text);
std::string to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

/// Replaces the run seed with the value of CMVAE_SEED when it is set.
/// A malformed value throws ConfigError.
void apply_seed_override(RunConfig& config, const char* value);

}  // namespace cmvae
