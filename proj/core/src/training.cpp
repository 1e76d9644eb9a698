#include "cmvae/training.hpp"

#include <cmath>
#include <string>

#include "cmvae/error.hpp"
#include "cmvae/random.hpp"

namespace cmvae {

namespace {

constexpr const char* kFirstMoment = "adam/m/";
constexpr const char* kSecondMoment = "adam/v/";
constexpr const char* kStepEntry = "state/step";

// KL(q || p) between diagonal Gaussians, summed over the last axis.
Var gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  Var per = (p.log_var - q.log_var + (exp(q.log_var) + square(q.mean - p.mean)) * exp(-p.log_var) - 1.0) * 0.5;
  return sum_rows(per);
}

}  // namespace

TrainState::TrainState(MultimodalModel m)
    : model(std::move(m)),
      first_moment(model.parameters().zeros_like()),
      second_moment(model.parameters().zeros_like()) {}

TrainState initial_state(const RunConfig& config, std::vector<ModalitySpec> modalities) {
  return TrainState(MultimodalModel(std::move(modalities), config.model.joint_kind, config.model.architecture,
                                    derive_seed(config.seed, "init")));
}

NamedArrays to_checkpoint(const TrainState& state) {
  NamedArrays out = to_named_arrays(state.model.parameters());
  NamedArrays m = to_named_arrays(state.first_moment, kFirstMoment);
  NamedArrays v = to_named_arrays(state.second_moment, kSecondMoment);
  out.insert(out.end(), m.begin(), m.end());
  out.insert(out.end(), v.begin(), v.end());
  out.emplace_back(kStepEntry, DenseArray::scalar(static_cast<double>(state.step)));
  return out;
}

void restore(TrainState& state, const NamedArrays& arrays) {
  assign_from(state.model.parameters(), arrays);
  assign_from(state.first_moment, arrays, kFirstMoment);
  assign_from(state.second_moment, arrays, kSecondMoment);
  for (const auto& [name, value] : arrays) {
    if (name == kStepEntry) {
      const double step = value.item();
      if (!(step >= 0.0) || step != std::floor(step)) throw FormatError("checkpoint step is not a count");
      state.step = static_cast<std::size_t>(step);
      return;
    }
  }
  state.step = 0;
}

void adam_update(TrainState& state, const ParameterStore& gradients, const OptimizerConfig& config) {
  ParameterStore& params = state.model.parameters();
  if (gradients.names() != params.names()) throw InvalidArgument("gradients do not match the parameters");
  if (state.step == 0) throw InvalidArgument("adam_update needs the step counter to include this update");
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params.values()[k].data();
    auto m = state.first_moment.values()[k].data();
    auto v = state.second_moment.values()[k].data();
    auto g = gradients.values()[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

ObjectiveTerms batch_objective(const ModelGraph& graph, std::span<const Var> obs, const ObjectiveConfig& objective,
                               std::uint64_t step_seed, EvaluationCounter* counter) {
  const MultimodalModel& model = graph.model();
  const std::size_t B = obs[0].value().rows();
  const std::size_t M = model.num_modalities();
  const std::uint64_t noise_seed = derive_seed(step_seed, "noise");
  ObjectiveTerms terms;
  if (objective.baseline() || M == 2) {
    NegativeSet negatives;
    if (!objective.baseline()) negatives = draw_negatives(B, M, objective.num_negatives, derive_seed(step_seed, "negatives"));
    terms = final_objective(graph, obs, negatives, objective, noise_seed, counter);
  } else {
    std::vector<IndexMatrix> tuples;
    for (std::size_t i = 0; i < B; ++i) {
      tuples.push_back(draw_index_matrix(B, M, objective.num_negatives,
                                         derive_seed(derive_seed(step_seed, "tuples"), static_cast<std::uint64_t>(i))));
    }
    terms = multimodal_objective(graph, obs, tuples, objective, noise_seed, counter);
  }
  if (model.has_joint_encoder()) {
    const DiagonalGaussian joint = graph.encode_joint(obs);
    for (std::size_t m = 0; m < M; ++m) terms.loss = terms.loss + mean(gaussian_kl(joint, graph.encode(m, obs[m])));
  }
  return terms;
}

StepRecord train_step(TrainState& state, const PairedDataset& data, const RunConfig& config, EvaluationCounter* counter) {
  const std::size_t B = config.optimizer.batch_size;
  if (data.size() < B) {
    throw InvalidArgument("dataset of " + std::to_string(data.size()) + " pairs is smaller than the batch size");
  }
  const std::uint64_t step_seed = derive_seed(derive_seed(config.seed, "step"), static_cast<std::uint64_t>(state.step));
  Rng rng(derive_seed(step_seed, "batch"));
  const std::vector<std::size_t> rows = sample_without_replacement(rng, data.size(), B, data.size());
  const std::vector<DenseArray> batch = data.observations(rows);

  Tape tape;
  ModelGraph graph(state.model, tape);
  std::vector<Var> obs;
  for (const DenseArray& x : batch) obs.push_back(tape.constant(x));
  ObjectiveTerms terms = batch_objective(graph, obs, config.objective, step_seed, counter);
  const double loss = terms.loss.item();
  if (!std::isfinite(loss)) {
    throw NumericalError("non-finite loss at step " + std::to_string(state.step));
  }
  tape.backward(terms.loss);
  const ParameterStore grads = graph.gradients();
  for (const DenseArray& g : grads.values())
    for (double v : g.data())
      if (!std::isfinite(v)) throw NumericalError("non-finite gradient at step " + std::to_string(state.step));
  state.step += 1;
  adam_update(state, grads, config.optimizer);
  return {state.step, loss, terms.term1, terms.term2};
}

}  // namespace cmvae
