#include "cmvae/objective.hpp"

#include <numeric>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/random.hpp"

namespace cmvae {

std::string to_string(ObjectiveVariant variant) {
  switch (variant) {
    case ObjectiveVariant::Baseline:
      return "baseline";
    case ObjectiveVariant::ContrastiveIwae:
      return "cI";
    case ObjectiveVariant::ContrastiveCubo:
      return "cC";
  }
  return "unknown";
}

ObjectiveVariant parse_objective_variant(std::string_view text) {
  if (text == "baseline") return ObjectiveVariant::Baseline;
  if (text == "cI" || text == "ci") return ObjectiveVariant::ContrastiveIwae;
  if (text == "cC" || text == "cc") return ObjectiveVariant::ContrastiveCubo;
  throw ConfigError("unknown objective variant '" + std::string(text) + "'");
}

ObjectiveConfig ObjectiveConfig::for_variant(ObjectiveVariant variant, double gamma, std::size_t negatives,
                                             std::size_t samples) {
  ObjectiveConfig c;
  c.variant = variant;
  c.num_negatives = negatives;
  switch (variant) {
    case ObjectiveVariant::Baseline:
      c.gamma = kBaselineGamma;
      c.term1 = {BoundKind::Elbo, samples};
      c.term2 = {BoundKind::Elbo, samples};
      break;
    case ObjectiveVariant::ContrastiveIwae:
      c.gamma = gamma;
      c.term1 = {BoundKind::Iwae, samples, GradientKind::DoublyReparameterized};
      c.term2 = {BoundKind::Iwae, samples, GradientKind::DoublyReparameterized};
      break;
    case ObjectiveVariant::ContrastiveCubo:
      c.gamma = gamma;
      c.term1 = {BoundKind::Iwae, samples, GradientKind::DoublyReparameterized};
      c.term2 = {BoundKind::Cubo, samples};
      break;
  }
  return c;
}

void ObjectiveConfig::validate() const {
  if (std::isnan(gamma) || gamma < 1.0) throw ConfigError("gamma must be at least 1");
  term1.validate();
  term2.validate();
  if (baseline()) return;
  if (num_negatives == 0) throw ConfigError("the contrastive objective needs at least one negative");
}

NegativeSet draw_negatives(std::size_t batch_size, std::size_t modalities, std::size_t num_negatives,
                           std::uint64_t seed) {
  if (batch_size < num_negatives + 1) {
    throw InvalidArgument("batch of " + std::to_string(batch_size) + " is too small for " +
                          std::to_string(num_negatives) + " negatives");
  }
  NegativeSet out;
  out.index.resize(modalities);
  for (std::size_t m = 0; m < modalities; ++m) {
    out.index[m].resize(batch_size);
    const std::uint64_t modality_seed = derive_seed(seed, static_cast<std::uint64_t>(m));
    for (std::size_t i = 0; i < batch_size; ++i) {
      Rng rng(derive_seed(modality_seed, static_cast<std::uint64_t>(i)));
      out.index[m][i] = sample_without_replacement(rng, batch_size, num_negatives, i);
    }
  }
  return out;
}

IndexMatrix draw_index_matrix(std::size_t batch_size, std::size_t modalities, std::size_t columns,
                              std::uint64_t seed) {
  if (batch_size == 0) throw InvalidArgument("cannot draw indices from an empty batch");
  IndexMatrix out;
  out.index.resize(modalities);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, batch_size - 1);
  for (auto& row : out.index) {
    row.resize(columns);
    for (std::size_t& j : row) j = pick(rng);
  }
  return out;
}

Var assemble_final_loss(const Var& positives, std::span<const Var> negative_blocks, double gamma) {
  if (negative_blocks.empty()) throw InvalidArgument("no negative blocks");
  Var lse = logsumexp_rows(negative_blocks[0]);
  for (std::size_t k = 1; k < negative_blocks.size(); ++k) lse = lse + logsumexp_rows(negative_blocks[k]);
  if (negative_blocks.size() > 1) lse = lse * (1.0 / static_cast<double>(negative_blocks.size()));
  return mean(positives * -gamma + lse);
}

double assemble_final_loss(std::span<const double> positives,
                           std::span<const std::vector<std::vector<double>>> negative_blocks, double gamma) {
  if (negative_blocks.empty()) throw InvalidArgument("no negative blocks");
  if (positives.empty()) throw InvalidArgument("no anchors");
  double total = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    double lse = 0.0;
    for (const auto& block : negative_blocks) {
      if (block.size() != positives.size()) throw ShapeError("negative block does not match the anchor count");
      lse += logsumexp(block[i]);
    }
    if (negative_blocks.size() > 1) lse *= 1.0 / static_cast<double>(negative_blocks.size());
    total += -gamma * positives[i] + lse;
  }
  return total / static_cast<double>(positives.size());
}

namespace {

std::size_t batch_rows(const MultimodalModel& model, std::span<const Var> obs) {
  if (obs.size() != model.num_modalities()) throw InvalidArgument("expected one observation array per modality");
  const std::size_t B = obs[0].value().rows();
  for (const Var& x : obs)
    if (x.value().rows() != B) throw ShapeError("observation arrays have different item counts");
  if (B == 0) throw InvalidArgument("empty batch");
  return B;
}

std::vector<std::size_t> row_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r(end - begin);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

ObjectiveTerms baseline_terms(const ModelGraph& graph, std::span<const Var> obs, std::size_t B,
                              const ObjectiveConfig& config, std::uint64_t seed, EvaluationCounter* counter) {
  Var est = joint_estimate(graph, obs, TupleSet::diagonal(obs.size(), B), config.term1, seed, counter);
  Var m = mean(est);
  return {-m, m.item(), std::numeric_limits<double>::quiet_NaN()};
}

// Estimates the first B tuples with term1 and the rest with term2, sharing
// one set of draws when both estimators need the same number.
std::pair<Var, Var> estimate_split(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                                   std::size_t B, const ObjectiveConfig& config, std::uint64_t seed,
                                   EvaluationCounter* counter) {
  const std::size_t total = tuples.size();
  const std::size_t d1 = draws_for(graph.model(), config.term1);
  const std::size_t d2 = draws_for(graph.model(), config.term2);
  if (d1 == d2) {
    const bool recording = graph.tape().recording();
    auto dreg = [&](const EstimatorSpec& e) {
      return recording && e.gradient == GradientKind::DoublyReparameterized;
    };
    Var lw;
    SplitLogWeights split;
    if (!dreg(config.term1) || !dreg(config.term2)) lw = joint_log_weights(graph, obs, tuples, d1, seed);
    if (dreg(config.term1) || dreg(config.term2)) split = joint_log_weights_split(graph, obs, tuples, d1, seed);
    if (counter != nullptr) {
      counter->tuples += total;
      counter->calls += 1;
    }
    const std::size_t strata = weight_strata(graph.model());
    auto reduce = [&](const EstimatorSpec& e, const std::vector<std::size_t>& rows) {
      if (dreg(e)) return reduce_log_weights_dreg({gather_rows(split.decoder, rows), gather_rows(split.latent, rows)}, strata);
      return reduce_log_weights(gather_rows(lw, rows), e.kind, strata);
    };
    return {reduce(config.term1, row_range(0, B)), reduce(config.term2, row_range(B, total))};
  }
  TupleSet pos(tuples.modalities()), neg(tuples.modalities());
  for (std::size_t m = 0; m < tuples.modalities(); ++m) {
    pos.index[m].assign(tuples.index[m].begin(), tuples.index[m].begin() + static_cast<std::ptrdiff_t>(B));
    neg.index[m].assign(tuples.index[m].begin() + static_cast<std::ptrdiff_t>(B), tuples.index[m].end());
  }
  return {joint_estimate(graph, obs, pos, config.term1, seed, counter),
          joint_estimate(graph, obs, neg, config.term2, seed, counter)};
}

}  // namespace

ObjectiveTerms final_objective(const ModelGraph& graph, std::span<const Var> obs, const NegativeSet& negatives,
                               const ObjectiveConfig& config, std::uint64_t seed, EvaluationCounter* counter) {
  config.validate();
  const MultimodalModel& model = graph.model();
  const std::size_t B = batch_rows(model, obs);
  if (config.baseline()) return baseline_terms(graph, obs, B, config, seed, counter);

  const std::size_t M = model.num_modalities();
  const std::size_t N = config.num_negatives;
  if (B <= N) throw InvalidArgument("batch size must exceed the number of negatives");
  if (negatives.modalities() != M || negatives.batch_size() != B || negatives.num_negatives() != N) {
    throw InvalidArgument("negative set does not match the batch and configuration");
  }

  TupleSet tuples = TupleSet::diagonal(M, B);
  std::vector<std::size_t> tuple(M);
  for (std::size_t m : model.canonical_order()) {
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t n = 0; n < N; ++n) {
        std::fill(tuple.begin(), tuple.end(), i);
        const std::size_t j = negatives.index[m][i][n];
        if (j >= B || j == i) throw InvalidArgument("negative index invalid for its anchor");
        tuple[m] = j;
        tuples.append(tuple);
      }
    }
  }
  auto [pos, neg] = estimate_split(graph, obs, tuples, B, config, seed, counter);
  std::vector<Var> blocks;
  for (std::size_t c = 0; c < M; ++c) {
    blocks.push_back(reshape(gather_rows(neg, row_range(c * B * N, (c + 1) * B * N)), Shape{B, N}));
  }
  Var loss = assemble_final_loss(pos, blocks, config.gamma);
  const double term1 = mean(pos).item();
  return {loss, term1, (loss.item() + config.gamma * term1)};
}

ObjectiveTerms multimodal_objective(const ModelGraph& graph, std::span<const Var> obs,
                                    std::span<const IndexMatrix> tuples, const ObjectiveConfig& config,
                                    std::uint64_t seed, EvaluationCounter* counter) {
  config.validate();
  const MultimodalModel& model = graph.model();
  const std::size_t B = batch_rows(model, obs);
  if (config.baseline()) return baseline_terms(graph, obs, B, config, seed, counter);

  const std::size_t M = model.num_modalities();
  const std::size_t N = config.num_negatives;
  if (tuples.size() != 1 && tuples.size() != B) {
    throw InvalidArgument("expected one index matrix, or one per anchor");
  }
  for (const IndexMatrix& J : tuples) {
    if (J.modalities() != M || J.columns() != N) throw ShapeError("index matrix must be [modalities x negatives]");
    for (const auto& row : J.index)
      for (std::size_t j : row)
        if (j >= B) throw InvalidArgument("index matrix entry " + std::to_string(j) + " out of range");
  }
  TupleSet all = TupleSet::diagonal(M, B);
  std::vector<std::size_t> tuple(M);
  for (std::size_t i = 0; i < B; ++i) {
    const IndexMatrix& J = tuples.size() == 1 ? tuples[0] : tuples[i];
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t m = 0; m < M; ++m) tuple[m] = J.index[m][n];
      all.append(tuple);
    }
  }
  auto [pos, neg] = estimate_split(graph, obs, all, B, config, seed, counter);
  Var block = reshape(neg, Shape{B, N});
  Var loss = assemble_final_loss(pos, std::span<const Var>(&block, 1), config.gamma);
  const double term1 = mean(pos).item();
  return {loss, term1, (loss.item() + config.gamma * term1)};
}

}  // namespace cmvae
