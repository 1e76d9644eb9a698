#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "cmvae/checkpoint.hpp"
#include "cmvae/model.hpp"
#include "cmvae/objective.hpp"
#include "cmvae/run_config.hpp"
#include "cmvae/synthetic.hpp"

namespace cmvae {

/// Parameters, Adam moments and the step counter. Every per-step random
/// stream derives from (seed, step), so this is the whole training state.
struct TrainState {
  MultimodalModel model;
  ParameterStore first_moment;
  ParameterStore second_moment;
  std::size_t step = 0;

  explicit TrainState(MultimodalModel m);
};

TrainState initial_state(const RunConfig& config, std::vector<ModalitySpec> modalities);

NamedArrays to_checkpoint(const TrainState& state);
/// Restores parameters, moments and step into a state of the same architecture.
void restore(TrainState& state, const NamedArrays& arrays);

/// Adam with bias correction; `state.step` must already count this update.
void adam_update(TrainState& state, const ParameterStore& gradients, const OptimizerConfig& config);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double term1 = 0.0;
  double term2 = 0.0;
};

/// Objective of one batch plus, for the explicit joint family, the KL terms
/// that fit the unimodal encoders to the joint posterior.
ObjectiveTerms batch_objective(const ModelGraph& graph, std::span<const Var> obs, const ObjectiveConfig& objective,
                               std::uint64_t step_seed, EvaluationCounter* counter = nullptr);

/// One optimizer step on a batch drawn from `data`. Throws NumericalError
/// on a non-finite loss or gradient without touching the state.
StepRecord train_step(TrainState& state, const PairedDataset& data, const RunConfig& config,
                      EvaluationCounter* counter = nullptr);

}  // namespace cmvae
