#include "cmvae/estimators.hpp"

#include <cmath>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"

namespace cmvae {

std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::Elbo:
      return "elbo";
    case BoundKind::Iwae:
      return "iwae";
    case BoundKind::Cubo:
      return "cubo";
  }
  return "unknown";
}

BoundKind parse_bound_kind(std::string_view text) {
  if (text == "elbo") return BoundKind::Elbo;
  if (text == "iwae") return BoundKind::Iwae;
  if (text == "cubo") return BoundKind::Cubo;
  throw ConfigError("unknown estimator '" + std::string(text) + "'");
}

std::string to_string(GradientKind kind) {
  return kind == GradientKind::Reparameterized ? "reparam" : "dreg";
}

GradientKind parse_gradient_kind(std::string_view text) {
  if (text == "reparam") return GradientKind::Reparameterized;
  if (text == "dreg") return GradientKind::DoublyReparameterized;
  throw ConfigError("unknown gradient estimator '" + std::string(text) + "'");
}

void EstimatorSpec::validate() const {
  if (samples == 0) throw InvalidArgument("estimator sample count must be at least 1");
  if (gradient == GradientKind::DoublyReparameterized && kind != BoundKind::Iwae) {
    throw InvalidArgument("doubly reparameterized gradients need the IWAE estimator");
  }
}

std::size_t draws_for(const MultimodalModel& model, const EstimatorSpec& spec) {
  spec.validate();
  if (model.joint_kind() == JointKind::MixtureOfExperts && spec.kind == BoundKind::Elbo) {
    return spec.samples * model.num_modalities();
  }
  return spec.samples;
}

Var joint_log_weights(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples, std::size_t draws,
                      std::uint64_t seed) {
  const MultimodalModel& model = graph.model();
  JointDraws d = draw_joint_posterior(graph, obs, tuples, draws, seed);
  const std::size_t P = tuples.size();
  const bool banked = model.joint_kind() == JointKind::MixtureOfExperts;

  // Decoding and the prior act on the distinct draws; each (tuple, sample) row picks its draw.
  Var prior = standard_normal_log_prob(d.bank_z);
  Var log_w = (banked ? gather_rows(prior, d.bank_row) : prior) - d.log_q;
  std::vector<std::size_t> rows(P * draws);
  for (std::size_t m : model.canonical_order()) {
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t s = 0; s < draws; ++s) rows[p * draws + s] = tuples.index[m][p];
    log_w = log_w + graph.decode(m, d.bank_z).log_prob_rows(d.bank_row, obs[m], rows);
  }
  return reshape(log_w, Shape{P, draws});
}

SplitLogWeights joint_log_weights_split(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                                        std::size_t draws, std::uint64_t seed) {
  const MultimodalModel& model = graph.model();
  JointDraws d = draw_joint_posterior(graph, obs, tuples, draws, seed, true);
  const std::size_t P = tuples.size();
  const bool banked = model.joint_kind() == JointKind::MixtureOfExperts;

  Var prior = standard_normal_log_prob(d.bank_z);
  Var latent = (banked ? gather_rows(prior, d.bank_row) : prior) - d.log_q;
  Var decoder;
  std::vector<std::size_t> rows(P * draws);
  for (std::size_t m : model.canonical_order()) {
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t s = 0; s < draws; ++s) rows[p * draws + s] = tuples.index[m][p];
    const ModelGraph::SplitDecode split = graph.decode_split(m, d.bank_z);
    latent = latent + split.latent.log_prob_rows(d.bank_row, obs[m], rows);
    Var ll = split.weights.log_prob_rows(d.bank_row, obs[m], rows);
    decoder = decoder.valid() ? decoder + ll : ll;
  }
  return {reshape(decoder, Shape{P, draws}), reshape(latent, Shape{P, draws})};
}

namespace {

Var reduce_rows(const Var& log_weights, BoundKind kind) {
  switch (kind) {
    case BoundKind::Elbo:
      return mean_rows(log_weights);
    case BoundKind::Iwae:
      return log_mean_exp_rows(log_weights);
    case BoundKind::Cubo:
      return log_mean_exp_rows(log_weights * 2.0) * 0.5;
  }
  throw InvalidArgument("unknown estimator kind");
}

double reduce_values(std::span<const double> log_weights, BoundKind kind) {
  switch (kind) {
    case BoundKind::Elbo: {
      double total = 0.0;
      for (double w : log_weights) total += w;
      return total / static_cast<double>(log_weights.size());
    }
    case BoundKind::Iwae:
      return log_mean_exp(log_weights);
    case BoundKind::Cubo: {
      std::vector<double> doubled(log_weights.begin(), log_weights.end());
      for (double& w : doubled) w *= 2.0;
      return 0.5 * log_mean_exp(doubled);
    }
  }
  throw InvalidArgument("unknown estimator kind");
}

void check_strata(std::size_t draws, std::size_t strata) {
  if (strata == 0 || draws % strata != 0) {
    throw ShapeError(std::to_string(draws) + " draws cannot be split into " + std::to_string(strata) + " groups");
  }
}

}  // namespace

Var reduce_log_weights(const Var& log_weights, BoundKind kind, std::size_t strata) {
  if (log_weights.value().rank() != 2) {
    throw ShapeError("log weights must be [items, samples], got " + shape_string(log_weights.shape()));
  }
  const std::size_t P = log_weights.value().rows(), K = log_weights.value().cols();
  check_strata(K, strata);
  if (strata == 1) return reduce_rows(log_weights, kind);
  Var grouped = reduce_rows(reshape(log_weights, Shape{P * strata, K / strata}), kind);
  return mean_rows(reshape(grouped, Shape{P, strata}));
}

Var reduce_log_weights_dreg(const SplitLogWeights& w, std::size_t strata) {
  if (w.latent.value().rank() != 2) {
    throw ShapeError("log weights must be [items, samples], got " + shape_string(w.latent.shape()));
  }
  const std::size_t P = w.latent.value().rows(), K = w.latent.value().cols();
  check_strata(K, strata);
  if (strata == 1) return log_mean_exp_rows_dreg(w.decoder, w.latent);
  const Shape grouped{P * strata, K / strata};
  Var reduced = log_mean_exp_rows_dreg(reshape(w.decoder, grouped), reshape(w.latent, grouped));
  return mean_rows(reshape(reduced, Shape{P, strata}));
}

double reduce_log_weights(std::span<const double> log_weights, BoundKind kind, std::size_t strata) {
  if (log_weights.empty()) throw InvalidArgument("no log weights to reduce");
  check_strata(log_weights.size(), strata);
  const std::size_t per = log_weights.size() / strata;
  double total = 0.0;
  for (std::size_t c = 0; c < strata; ++c) total += reduce_values(log_weights.subspan(c * per, per), kind);
  return total / static_cast<double>(strata);
}

std::size_t weight_strata(const MultimodalModel& model) {
  return model.joint_kind() == JointKind::MixtureOfExperts ? model.num_modalities() : 1;
}

Var joint_estimate(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                   const EstimatorSpec& spec, std::uint64_t seed, EvaluationCounter* counter) {
  const std::size_t draws = draws_for(graph.model(), spec);
  const std::size_t strata = weight_strata(graph.model());
  Var est = spec.gradient == GradientKind::DoublyReparameterized && graph.tape().recording()
                ? reduce_log_weights_dreg(joint_log_weights_split(graph, obs, tuples, draws, seed), strata)
                : reduce_log_weights(joint_log_weights(graph, obs, tuples, draws, seed), spec.kind, strata);
  if (counter != nullptr) {
    counter->tuples += tuples.size();
    counter->calls += 1;
  }
  return est;
}

Var unimodal_marginal(const ModelGraph& graph, std::size_t modality, const Var& obs, std::size_t samples,
                      std::uint64_t seed) {
  if (samples == 0) throw InvalidArgument("estimator sample count must be at least 1");
  const MultimodalModel& model = graph.model();
  const ModalitySpec& spec = model.modality(modality);
  const std::size_t B = obs.value().rows();
  const std::size_t L = model.latent_dim();
  if (B == 0) throw InvalidArgument("no observations given");
  DiagonalGaussian q = graph.encode(modality, obs);

  std::vector<std::size_t> rep(B * samples);
  std::vector<double> noise;
  noise.reserve(B * samples * L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t s = 0; s < samples; ++s) rep[b * samples + s] = b;
    std::vector<double> e = standard_normals(observation_seed(seed, spec.name, obs.value().row(b)), samples * L);
    noise.insert(noise.end(), e.begin(), e.end());
  }
  DiagonalGaussian q_rep = q.gather(rep);
  Var z = rsample(q_rep, graph.tape().constant(DenseArray(Shape{B * samples, L}, std::move(noise))));
  Var log_w = standard_normal_log_prob(z) + graph.decode(modality, z).log_prob(gather_rows(obs, rep)) -
              gaussian_log_prob(q_rep, z);
  return reduce_log_weights(reshape(log_w, Shape{B, samples}), BoundKind::Iwae);
}

namespace {

std::vector<double> to_vector(const Var& v) { return v.value().values(); }

}  // namespace

std::vector<double> joint_estimate(const MultimodalModel& model, std::span<const DenseArray> obs,
                                   const EstimatorSpec& spec, std::uint64_t seed) {
  if (obs.size() != model.num_modalities()) throw InvalidArgument("expected one observation array per modality");
  Tape tape(false);
  ModelGraph graph(model, tape);
  std::vector<Var> x;
  for (const DenseArray& a : obs) {
    if (a.rows() != obs[0].rows()) throw ShapeError("observation arrays have different item counts");
    x.push_back(tape.constant(a));
  }
  return to_vector(joint_estimate(graph, x, TupleSet::diagonal(obs.size(), obs[0].rows()), spec, seed));
}

std::vector<double> elbo(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                         std::uint64_t seed) {
  return joint_estimate(model, obs, {BoundKind::Elbo, samples}, seed);
}

std::vector<double> iwae(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                         std::uint64_t seed) {
  return joint_estimate(model, obs, {BoundKind::Iwae, samples}, seed);
}

std::vector<double> cubo(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                         std::uint64_t seed) {
  return joint_estimate(model, obs, {BoundKind::Cubo, samples}, seed);
}

std::vector<double> unimodal_marginal(const MultimodalModel& model, std::size_t modality, const DenseArray& obs,
                                      std::size_t samples, std::uint64_t seed) {
  Tape tape(false);
  ModelGraph graph(model, tape);
  return to_vector(unimodal_marginal(graph, modality, tape.constant(obs), samples, seed));
}

}  // namespace cmvae
