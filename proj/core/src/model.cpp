#include "cmvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmvae/error.hpp"

namespace cmvae {

std::string to_string(JointKind kind) {
  switch (kind) {
    case JointKind::ExplicitJoint:
      return "explicit";
    case JointKind::ProductOfExperts:
      return "poe";
    case JointKind::MixtureOfExperts:
      return "moe";
  }
  return "unknown";
}

JointKind parse_joint_kind(std::string_view text) {
  if (text == "explicit" || text == "jmvae") return JointKind::ExplicitJoint;
  if (text == "poe" || text == "mvae") return JointKind::ProductOfExperts;
  if (text == "moe" || text == "mmvae") return JointKind::MixtureOfExperts;
  throw ConfigError("unknown joint posterior family '" + std::string(text) + "'");
}

std::string to_string(LikelihoodKind kind) {
  return kind == LikelihoodKind::Bernoulli ? "bernoulli" : "gaussian";
}

LikelihoodKind parse_likelihood_kind(std::string_view text) {
  if (text == "bernoulli") return LikelihoodKind::Bernoulli;
  if (text == "gaussian") return LikelihoodKind::Gaussian;
  throw ConfigError("unknown likelihood '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

void ParameterStore::add(std::string name, DenseArray value) {
  if (lookup_.contains(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  lookup_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParameterStore::contains(std::string_view name) const { return lookup_.contains(std::string(name)); }

std::size_t ParameterStore::index_of(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) throw InvalidArgument("no parameter named '" + std::string(name) + "'");
  return it->second;
}

DenseArray& ParameterStore::at(std::string_view name) { return values_[index_of(name)]; }
const DenseArray& ParameterStore::at(std::string_view name) const { return values_[index_of(name)]; }

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const DenseArray& v : values_) n += v.size();
  return n;
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], DenseArray(values_[i].shape()));
  return out;
}

// ---------------------------------------------------------------------------

std::string MultimodalModel::encoder_prefix(std::string_view modality) {
  return "encoder/" + std::string(modality);
}
std::string MultimodalModel::decoder_prefix(std::string_view modality) {
  return "decoder/" + std::string(modality);
}
std::string MultimodalModel::joint_encoder_prefix() { return "joint_encoder"; }
std::string MultimodalModel::layer_weight(std::string_view prefix, std::size_t layer) {
  return std::string(prefix) + "/layer" + std::to_string(layer) + "/weight";
}
std::string MultimodalModel::layer_bias(std::string_view prefix, std::size_t layer) {
  return std::string(prefix) + "/layer" + std::to_string(layer) + "/bias";
}
std::string MultimodalModel::decoder_log_var(std::string_view modality) {
  return decoder_prefix(modality) + "/log_var";
}

MultimodalModel::MultimodalModel(std::vector<ModalitySpec> modalities, JointKind kind, ArchitectureSpec arch,
                                 std::uint64_t init_seed)
    : modalities_(std::move(modalities)), kind_(kind), arch_(arch) {
  if (modalities_.size() < 2) throw InvalidArgument("a multimodal model needs at least two modalities");
  if (arch_.latent_dim == 0) throw InvalidArgument("latent dimension must be positive");
  if (arch_.hidden_layers > 0 && arch_.hidden_width == 0) throw InvalidArgument("hidden width must be positive");
  for (std::size_t i = 0; i < modalities_.size(); ++i) {
    if (modalities_[i].obs_dim == 0) throw InvalidArgument("modality '" + modalities_[i].name + "' has no dimensions");
    for (std::size_t j = 0; j < i; ++j)
      if (modalities_[j].name == modalities_[i].name)
        throw InvalidArgument("duplicate modality name '" + modalities_[i].name + "'");
  }
  canonical_.resize(modalities_.size());
  std::iota(canonical_.begin(), canonical_.end(), std::size_t{0});
  std::sort(canonical_.begin(), canonical_.end(),
            [&](std::size_t a, std::size_t b) { return modalities_[a].name < modalities_[b].name; });

  const std::size_t latent = arch_.latent_dim;
  for (const ModalitySpec& m : modalities_) {
    Rng rng(derive_seed(init_seed, encoder_prefix(m.name)));
    add_network(encoder_prefix(m.name), m.obs_dim, 2 * latent, rng);
  }
  for (const ModalitySpec& m : modalities_) {
    Rng rng(derive_seed(init_seed, decoder_prefix(m.name)));
    add_network(decoder_prefix(m.name), latent, m.obs_dim, rng);
    if (m.likelihood == LikelihoodKind::Gaussian) params_.add(decoder_log_var(m.name), DenseArray(Shape{m.obs_dim}));
  }
  if (kind_ == JointKind::ExplicitJoint) {
    std::size_t total = 0;
    for (const ModalitySpec& m : modalities_) total += m.obs_dim;
    Rng rng(derive_seed(init_seed, joint_encoder_prefix()));
    add_network(joint_encoder_prefix(), total, 2 * latent, rng);
  }
}

void MultimodalModel::add_network(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  std::size_t fan_in = in;
  for (std::size_t layer = 0; layer <= arch_.hidden_layers; ++layer) {
    const std::size_t fan_out = layer == arch_.hidden_layers ? out : arch_.hidden_width;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
    DenseArray w(Shape{fan_out, fan_in});
    for (double& v : w.data()) v = normal(rng);
    params_.add(layer_weight(prefix, layer), std::move(w));
    params_.add(layer_bias(prefix, layer), DenseArray(Shape{fan_out}));
    fan_in = fan_out;
  }
}

std::size_t MultimodalModel::modality_index(std::string_view name) const {
  for (std::size_t i = 0; i < modalities_.size(); ++i)
    if (modalities_[i].name == name) return i;
  throw InvalidArgument("unknown modality '" + std::string(name) + "'");
}

const ModalitySpec& MultimodalModel::modality(std::size_t index) const {
  if (index >= modalities_.size()) throw InvalidArgument("modality index out of range");
  return modalities_[index];
}

void MultimodalModel::zero_output_layers() {
  const std::size_t last = arch_.hidden_layers;
  auto zero = [&](const std::string& prefix) {
    for (double& v : params_.at(layer_weight(prefix, last)).data()) v = 0.0;
    for (double& v : params_.at(layer_bias(prefix, last)).data()) v = 0.0;
  };
  for (const ModalitySpec& m : modalities_) {
    zero(encoder_prefix(m.name));
    zero(decoder_prefix(m.name));
  }
  if (has_joint_encoder()) zero(joint_encoder_prefix());
}

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(const MultimodalModel& model, Tape& tape) : model_(&model), tape_(&tape) {
  const ParameterStore& store = model.parameters();
  vars_.reserve(store.size());
  for (const DenseArray& v : store.values()) vars_.push_back(tape.variable(v));
}

ModelGraph::ModelGraph(const MultimodalModel& model, Tape& tape, std::span<const Var> bound)
    : model_(&model), tape_(&tape), vars_(bound.begin(), bound.end()) {
  const ParameterStore& store = model.parameters();
  if (vars_.size() != store.size()) throw InvalidArgument("bound variable count does not match the model");
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    tape.check_owned(vars_[i]);
    if (vars_[i].shape() != store.values()[i].shape()) {
      throw ShapeError("bound variable for '" + store.names()[i] + "' has shape " + shape_string(vars_[i].shape()) +
                       ", expected " + shape_string(store.values()[i].shape()));
    }
  }
}

const Var& ModelGraph::param(const std::string& name) const { return vars_[model_->parameters().index_of(name)]; }

Var ModelGraph::network(const std::string& prefix, Var input, std::vector<Var>* hidden) const {
  const std::size_t layers = model_->architecture().hidden_layers;
  for (std::size_t layer = 0; layer <= layers; ++layer) {
    input = affine(input, param(MultimodalModel::layer_weight(prefix, layer)),
                   param(MultimodalModel::layer_bias(prefix, layer)));
    if (layer < layers) {
      input = tanh(input);
      if (hidden != nullptr) hidden->push_back(input);
    }
  }
  return input;
}

DiagonalGaussian ModelGraph::split_gaussian(const Var& out) const {
  const std::size_t latent = model_->latent_dim();
  return {slice_cols(out, 0, latent), slice_cols(out, latent, 2 * latent)};
}

DiagonalGaussian ModelGraph::encode(std::size_t modality, const Var& obs) const {
  const ModalitySpec& spec = model_->modality(modality);
  if (obs.value().rank() != 2 || obs.shape()[1] != spec.obs_dim) {
    throw ShapeError("dimension mismatch for modality '" + spec.name + "': got " + shape_string(obs.shape()) +
                     ", expected [B," + std::to_string(spec.obs_dim) + "]");
  }
  return split_gaussian(network(MultimodalModel::encoder_prefix(spec.name), obs));
}

DiagonalGaussian ModelGraph::encode_joint(std::span<const Var> obs) const {
  if (!model_->has_joint_encoder()) throw UnsupportedError("model has no joint encoder");
  if (obs.size() != model_->num_modalities()) throw InvalidArgument("joint encoder needs every modality");
  for (std::size_t m = 0; m < obs.size(); ++m) {
    const ModalitySpec& spec = model_->modality(m);
    if (obs[m].value().rank() != 2 || obs[m].shape()[1] != spec.obs_dim || obs[m].shape()[0] != obs[0].shape()[0]) {
      throw ShapeError("dimension mismatch for modality '" + spec.name + "' in joint encoder: " +
                       shape_string(obs[m].shape()));
    }
  }
  return split_gaussian(network(MultimodalModel::joint_encoder_prefix(), concat_cols(obs)));
}

void ModelGraph::check_latent(const Var& z) const {
  if (z.value().rank() != 2 || z.shape()[1] != model_->latent_dim()) {
    throw ShapeError("latent shape " + shape_string(z.shape()) + " does not match latent dimension " +
                     std::to_string(model_->latent_dim()));
  }
}

ObservationLikelihood ModelGraph::decode(std::size_t modality, const Var& z) const {
  const ModalitySpec& spec = model_->modality(modality);
  check_latent(z);
  Var out = network(MultimodalModel::decoder_prefix(spec.name), z);
  if (spec.likelihood == LikelihoodKind::Bernoulli) return ObservationLikelihood::bernoulli(out);
  return ObservationLikelihood::gaussian(out, param(MultimodalModel::decoder_log_var(spec.name)));
}

ModelGraph::SplitDecode ModelGraph::decode_split(std::size_t modality, const Var& z) const {
  const ModalitySpec& spec = model_->modality(modality);
  check_latent(z);
  const std::string prefix = MultimodalModel::decoder_prefix(spec.name);
  std::vector<Var> hidden, weights;
  Var out = network(prefix, tape_->constant(z.value()), &hidden);
  for (std::size_t layer = 0; layer <= hidden.size(); ++layer)
    weights.push_back(param(MultimodalModel::layer_weight(prefix, layer)));
  Var frozen = frozen_tanh_network(z, out, hidden, weights);
  if (spec.likelihood == LikelihoodKind::Bernoulli) {
    return {ObservationLikelihood::bernoulli(out), ObservationLikelihood::bernoulli(frozen)};
  }
  const Var& log_var = param(MultimodalModel::decoder_log_var(spec.name));
  return {ObservationLikelihood::gaussian(out, log_var),
          ObservationLikelihood::gaussian(frozen, tape_->constant(log_var.value()))};
}

ParameterStore ModelGraph::gradients() const {
  const ParameterStore& store = model_->parameters();
  ParameterStore out;
  for (std::size_t i = 0; i < vars_.size(); ++i) out.add(store.names()[i], tape_->gradient(vars_[i]));
  return out;
}

// ---------------------------------------------------------------------------

TupleSet TupleSet::diagonal(std::size_t modalities, std::size_t count) {
  TupleSet t(modalities);
  for (auto& column : t.index) {
    column.resize(count);
    std::iota(column.begin(), column.end(), std::size_t{0});
  }
  return t;
}

void TupleSet::append(std::span<const std::size_t> tuple) {
  if (tuple.size() != index.size()) throw InvalidArgument("tuple arity does not match the tuple set");
  for (std::size_t m = 0; m < tuple.size(); ++m) index[m].push_back(tuple[m]);
}

std::uint64_t observation_seed(std::uint64_t seed, std::string_view name, std::span<const double> row) {
  return derive_seed(seed, derive_seed(content_hash(name), content_hash(row)));
}

namespace {

void check_tuples(const MultimodalModel& model, std::span<const Var> obs, const TupleSet& tuples) {
  if (obs.size() != model.num_modalities() || tuples.modalities() != model.num_modalities()) {
    throw InvalidArgument("expected one observation array and tuple column per modality");
  }
  for (std::size_t m = 0; m < obs.size(); ++m) {
    const std::size_t rows = obs[m].value().rows();
    for (std::size_t i : tuples.index[m])
      if (i >= rows) throw InvalidArgument("tuple index out of range for modality '" + model.modality(m).name + "'");
  }
}

// Row p*samples + s of the result reads row p of `per_tuple`.
std::vector<std::size_t> repeat_each(std::size_t count, std::size_t times) {
  std::vector<std::size_t> out(count * times);
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t s = 0; s < times; ++s) out[p * times + s] = p;
  return out;
}

DiagonalGaussian detached(Tape& tape, const DiagonalGaussian& d) {
  return {tape.constant(d.mean.value()), tape.constant(d.log_var.value())};
}

JointDraws draw_mixture(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                        std::size_t samples, std::uint64_t seed, bool detach_density) {
  const MultimodalModel& model = graph.model();
  const std::size_t M = model.num_modalities();
  if (samples % M != 0) {
    throw InvalidArgument("mixture posterior needs a sample count divisible by the number of modalities (" +
                          std::to_string(samples) + " % " + std::to_string(M) + ")");
  }
  const std::size_t per = samples / M;
  const std::size_t L = model.latent_dim();
  const std::size_t P = tuples.size();

  std::vector<DiagonalGaussian> posteriors(M);
  for (std::size_t m = 0; m < M; ++m) posteriors[m] = graph.encode(m, obs[m]);

  std::vector<Var> banks;
  std::vector<std::size_t> offset(M);
  std::size_t rows = 0;
  for (std::size_t c = 0; c < M; ++c) {
    const std::size_t m = model.canonical_order()[c];
    const DenseArray& x = obs[m].value();
    const std::size_t B = x.rows();
    std::vector<double> noise;
    noise.reserve(B * per * L);
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> e = standard_normals(observation_seed(seed, model.modality(m).name, x.row(b)), per * L);
      noise.insert(noise.end(), e.begin(), e.end());
    }
    const std::vector<std::size_t> rep = repeat_each(B, per);
    Var eps = graph.tape().constant(DenseArray(Shape{B * per, L}, std::move(noise)));
    banks.push_back(rsample(posteriors[m].gather(rep), eps));
    offset[c] = rows;
    rows += B * per;
  }

  JointDraws out;
  out.samples = samples;
  out.bank_z = concat_rows(banks);
  out.bank_row.resize(P * samples);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t c = s / per;
      const std::size_t m = model.canonical_order()[c];
      out.bank_row[p * samples + s] = offset[c] + tuples.index[m][p] * per + s % per;
    }
  }
  out.z = gather_rows(out.bank_z, out.bank_row);

  std::vector<Var> log_q_parts;
  for (std::size_t c = 0; c < M; ++c) {
    const std::size_t m = model.canonical_order()[c];
    std::vector<std::size_t> rows_m(P * samples);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t s = 0; s < samples; ++s) rows_m[p * samples + s] = tuples.index[m][p];
    DiagonalGaussian q = detach_density ? detached(graph.tape(), posteriors[m]) : posteriors[m];
    log_q_parts.push_back(gaussian_log_prob_rows(q.mean, rows_m, q.log_var, out.bank_z, out.bank_row));
  }
  out.log_q = log_mean_exp_rows(concat_cols(log_q_parts));
  return out;
}

JointDraws draw_single_posterior(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                                 std::size_t samples, std::uint64_t seed, bool detach_density) {
  const MultimodalModel& model = graph.model();
  const std::size_t M = model.num_modalities();
  const std::size_t L = model.latent_dim();
  const std::size_t P = tuples.size();

  DiagonalGaussian joint;
  if (model.joint_kind() == JointKind::ProductOfExperts) {
    std::vector<DiagonalGaussian> experts;
    for (std::size_t c = 0; c < M; ++c) {
      const std::size_t m = model.canonical_order()[c];
      experts.push_back(graph.encode(m, obs[m]).gather(tuples.index[m]));
    }
    joint = gaussian_product(experts, true);
  } else {
    std::vector<Var> rows;
    for (std::size_t m = 0; m < M; ++m) rows.push_back(gather_rows(obs[m], tuples.index[m]));
    joint = graph.encode_joint(rows);
  }

  std::vector<double> noise;
  noise.reserve(P * samples * L);
  for (std::size_t p = 0; p < P; ++p) {
    std::uint64_t key = 0;
    for (std::size_t m = 0; m < M; ++m) {
      key ^= derive_seed(content_hash(model.modality(m).name), content_hash(obs[m].value().row(tuples.index[m][p])));
    }
    std::vector<double> e = standard_normals(derive_seed(seed, key), samples * L);
    noise.insert(noise.end(), e.begin(), e.end());
  }
  DiagonalGaussian repeated = joint.gather(repeat_each(P, samples));
  JointDraws out;
  out.samples = samples;
  out.z = rsample(repeated, graph.tape().constant(DenseArray(Shape{P * samples, L}, std::move(noise))));
  out.bank_z = out.z;
  out.bank_row.resize(P * samples);
  std::iota(out.bank_row.begin(), out.bank_row.end(), std::size_t{0});
  out.log_q = gaussian_log_prob(detach_density ? detached(graph.tape(), repeated) : repeated, out.z);
  return out;
}

}  // namespace

JointDraws draw_joint_posterior(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                                std::size_t samples, std::uint64_t seed, bool detach_density) {
  if (samples == 0) throw InvalidArgument("sample count must be positive");
  check_tuples(graph.model(), obs, tuples);
  if (tuples.size() == 0) throw InvalidArgument("no tuples to draw for");
  if (graph.model().joint_kind() == JointKind::MixtureOfExperts) return draw_mixture(graph, obs, tuples, samples, seed, detach_density);
  return draw_single_posterior(graph, obs, tuples, samples, seed, detach_density);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Var> constants(Tape& tape, std::span<const DenseArray> obs) {
  std::vector<Var> out;
  for (const DenseArray& x : obs) out.push_back(tape.constant(x));
  return out;
}

std::size_t common_rows(std::span<const DenseArray> obs) {
  if (obs.empty()) throw InvalidArgument("no observations given");
  for (const DenseArray& x : obs)
    if (x.rows() != obs[0].rows()) throw ShapeError("observation arrays have different item counts");
  return obs[0].rows();
}

}  // namespace

GaussianParams encode_unimodal(const MultimodalModel& model, std::size_t modality, const DenseArray& obs) {
  Tape tape(false);
  ModelGraph graph(model, tape);
  DiagonalGaussian q = graph.encode(modality, tape.constant(obs));
  return {q.mean.value(), q.log_var.value()};
}

PosteriorSamples joint_posterior_samples(const MultimodalModel& model, std::span<const DenseArray> obs,
                                         std::size_t samples, std::uint64_t seed) {
  const std::size_t B = common_rows(obs);
  Tape tape(false);
  ModelGraph graph(model, tape);
  std::vector<Var> x = constants(tape, obs);
  JointDraws d = draw_joint_posterior(graph, x, TupleSet::diagonal(model.num_modalities(), B), samples, seed);
  return {d.z.value(), d.log_q.value()};
}

std::vector<DecodedLikelihood> decode_all(const MultimodalModel& model, const DenseArray& z) {
  Tape tape(false);
  ModelGraph graph(model, tape);
  Var zv = tape.constant(z);
  std::vector<DecodedLikelihood> out;
  for (std::size_t m = 0; m < model.num_modalities(); ++m) {
    ObservationLikelihood lik = graph.decode(m, zv);
    out.push_back({lik.kind, lik.location.value(), lik.log_var.valid() ? lik.log_var.value() : DenseArray(),
                   lik.mean().value()});
  }
  return out;
}

std::vector<DenseArray> joint_generate(const MultimodalModel& model, std::size_t n, std::uint64_t seed) {
  const std::size_t L = model.latent_dim();
  if (n == 0) {
    std::vector<DenseArray> empty;
    for (const ModalitySpec& m : model.modalities()) empty.emplace_back(Shape{0, m.obs_dim});
    return empty;
  }
  DenseArray z(Shape{n, L}, standard_normals(derive_seed(seed, "prior"), n * L));
  std::vector<DenseArray> out;
  for (DecodedLikelihood& d : decode_all(model, z)) out.push_back(std::move(d.mean));
  return out;
}

DenseArray cross_generate(const MultimodalModel& model, std::size_t source, std::size_t target,
                          const DenseArray& obs, std::uint64_t seed) {
  const ModalitySpec& src = model.modality(source);
  model.modality(target);
  if (source == target) throw InvalidArgument("cross generation needs distinct source and target modalities");
  const std::size_t L = model.latent_dim();
  const std::size_t B = obs.rows();
  if (B == 0) return DenseArray(Shape{0, model.modality(target).obs_dim});
  Tape tape(false);
  ModelGraph graph(model, tape);
  DiagonalGaussian q = graph.encode(source, tape.constant(obs));
  std::vector<double> noise;
  noise.reserve(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> e = standard_normals(observation_seed(seed, src.name, obs.row(b)), L);
    noise.insert(noise.end(), e.begin(), e.end());
  }
  Var z = rsample(q, tape.constant(DenseArray(Shape{B, L}, std::move(noise))));
  return graph.decode(target, z).mean().value();
}

std::vector<DenseArray> joint_reconstruct(const MultimodalModel& model, std::span<const DenseArray> obs,
                                          std::uint64_t seed) {
  const std::size_t B = common_rows(obs);
  const std::size_t M = model.num_modalities();
  const std::size_t L = model.latent_dim();
  const bool mixture = model.joint_kind() == JointKind::MixtureOfExperts;
  const std::size_t samples = mixture ? M : 1;
  PosteriorSamples draws = joint_posterior_samples(model, obs, samples, seed);
  DenseArray z(Shape{B, L});
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t s = mixture ? derive_seed(seed, static_cast<std::uint64_t>(b)) % M : 0;
    std::span<const double> row = draws.z.row(b * samples + s);
    std::copy(row.begin(), row.end(), z.data().begin() + static_cast<std::ptrdiff_t>(b * L));
  }
  std::vector<DenseArray> out;
  for (DecodedLikelihood& d : decode_all(model, z)) out.push_back(std::move(d.mean));
  return out;
}

}  // namespace cmvae
