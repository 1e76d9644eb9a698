#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmvae/autodiff.hpp"
#include "cmvae/distributions.hpp"
#include "cmvae/random.hpp"

namespace cmvae {

enum class JointKind { ExplicitJoint, ProductOfExperts, MixtureOfExperts };

std::string to_string(JointKind kind);
JointKind parse_joint_kind(std::string_view text);
std::string to_string(LikelihoodKind kind);
LikelihoodKind parse_likelihood_kind(std::string_view text);

struct ModalitySpec {
  std::string name;
  std::size_t obs_dim = 0;
  LikelihoodKind likelihood = LikelihoodKind::Bernoulli;
};

/// Every encoder and decoder is an MLP with `hidden_layers` tanh layers of
/// `hidden_width` units followed by a linear output layer. Zero hidden
/// layers gives a plain affine map.
struct ArchitectureSpec {
  std::size_t latent_dim = 8;
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 64;
};

/// Named parameter arrays in insertion order.
class ParameterStore {
 public:
  void add(std::string name, DenseArray value);
  bool contains(std::string_view name) const;
  /// Position of `name` in insertion order; throws InvalidArgument if absent.
  std::size_t index_of(std::string_view name) const;
  DenseArray& at(std::string_view name);
  const DenseArray& at(std::string_view name) const;

  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::string>& names() const { return names_; }
  std::vector<DenseArray>& values() { return values_; }
  const std::vector<DenseArray>& values() const { return values_; }

  /// Same names and shapes, all zeros.
  ParameterStore zeros_like() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<DenseArray> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Unimodal encoders q(z|x_m), decoders p(x_m|z) and, for the explicit joint
/// family, a joint encoder on the concatenated observations.
class MultimodalModel {
 public:
  MultimodalModel(std::vector<ModalitySpec> modalities, JointKind kind, ArchitectureSpec arch,
                  std::uint64_t init_seed);

  const std::vector<ModalitySpec>& modalities() const { return modalities_; }
  std::size_t num_modalities() const { return modalities_.size(); }
  std::size_t modality_index(std::string_view name) const;
  const ModalitySpec& modality(std::size_t index) const;
  /// Modality indices sorted by name. Reductions over modalities follow
  /// this order, which makes results independent of declaration order.
  const std::vector<std::size_t>& canonical_order() const { return canonical_; }

  JointKind joint_kind() const { return kind_; }
  const ArchitectureSpec& architecture() const { return arch_; }
  std::size_t latent_dim() const { return arch_.latent_dim; }
  bool has_joint_encoder() const { return kind_ == JointKind::ExplicitJoint; }

  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  /// Zeroes the output layer of every encoder and decoder: encoders then
  /// return N(0, I) and decoders a constant for any input.
  void zero_output_layers();

  static std::string encoder_prefix(std::string_view modality);
  static std::string decoder_prefix(std::string_view modality);
  static std::string joint_encoder_prefix();
  static std::string layer_weight(std::string_view prefix, std::size_t layer);
  static std::string layer_bias(std::string_view prefix, std::size_t layer);
  static std::string decoder_log_var(std::string_view modality);

 private:
  void add_network(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

  std::vector<ModalitySpec> modalities_;
  std::vector<std::size_t> canonical_;
  JointKind kind_;
  ArchitectureSpec arch_;
  ParameterStore params_;
};

/// A model's parameters bound to a tape, plus the network forward passes.
class ModelGraph {
 public:
  ModelGraph(const MultimodalModel& model, Tape& tape);
  /// Binds externally created variables, one per parameter in store order.
  ModelGraph(const MultimodalModel& model, Tape& tape, std::span<const Var> bound);

  const MultimodalModel& model() const { return *model_; }
  Tape& tape() const { return *tape_; }

  DiagonalGaussian encode(std::size_t modality, const Var& obs) const;
  /// Joint encoder on row-aligned observations of every modality.
  DiagonalGaussian encode_joint(std::span<const Var> obs) const;
  ObservationLikelihood decode(std::size_t modality, const Var& z) const;
  /// One decoder pass on z seen two ways: `weights` differentiates the
  /// parameters with z held constant, `latent` differentiates z with the
  /// parameters held constant.
  struct SplitDecode {
    ObservationLikelihood weights;
    ObservationLikelihood latent;
  };
  SplitDecode decode_split(std::size_t modality, const Var& z) const;

  const std::vector<Var>& parameter_vars() const { return vars_; }
  /// Gradients from the tape's last backward pass, in parameter store layout.
  ParameterStore gradients() const;

 private:
  const Var& param(const std::string& name) const;
  void check_latent(const Var& z) const;
  Var network(const std::string& prefix, Var input, std::vector<Var>* hidden = nullptr) const;
  DiagonalGaussian split_gaussian(const Var& out) const;

  const MultimodalModel* model_;
  Tape* tape_;
  std::vector<Var> vars_;
};

/// Index tuples into per-modality observation arrays: tuple p combines row
/// `index[m][p]` of every modality m.
struct TupleSet {
  std::vector<std::vector<std::size_t>> index;

  explicit TupleSet(std::size_t modalities = 0) : index(modalities) {}
  static TupleSet diagonal(std::size_t modalities, std::size_t count);

  std::size_t modalities() const { return index.size(); }
  std::size_t size() const { return index.empty() ? 0 : index[0].size(); }
  void append(std::span<const std::size_t> tuple);
};

/// Latent draws from q(z | tuple) for every tuple, `samples` per tuple.
///
/// For the mixture family the draws are stratified: samples / M come from
/// each unimodal posterior, and one bank of draws per (modality, item) is
/// shared by every tuple containing that item. `log_q` is then the mixture
/// density. Noise for a draw is seeded by `seed` and the observation content
/// it is conditioned on, so results do not depend on batch position.
/// With `detach_density` the posterior parameters inside `log_q` are
/// constants, so gradients reach the encoders only through the draws.
struct JointDraws {
  Var bank_z;                         // [R, L] distinct draws
  std::vector<std::size_t> bank_row;  // row of bank_z for (tuple p, sample s) at p * samples + s
  Var z;                              // [P * samples, L]
  Var log_q;                          // [P * samples]
  std::size_t samples = 0;
};

JointDraws draw_joint_posterior(const ModelGraph& graph, std::span<const Var> obs, const TupleSet& tuples,
                                std::size_t samples, std::uint64_t seed, bool detach_density = false);

/// Seed of the noise used for a draw conditioned on `row` of modality `name`.
std::uint64_t observation_seed(std::uint64_t seed, std::string_view name, std::span<const double> row);

// ---------------------------------------------------------------------------
// Value-level entry points (no gradients).

struct GaussianParams {
  DenseArray mean;
  DenseArray log_var;
};

struct PosteriorSamples {
  DenseArray z;      // [B * samples, L], item-major
  DenseArray log_q;  // [B * samples]
};

struct DecodedLikelihood {
  LikelihoodKind kind;
  DenseArray location;
  DenseArray log_var;  // empty for Bernoulli
  DenseArray mean;
};

GaussianParams encode_unimodal(const MultimodalModel& model, std::size_t modality, const DenseArray& obs);
PosteriorSamples joint_posterior_samples(const MultimodalModel& model, std::span<const DenseArray> obs,
                                         std::size_t samples, std::uint64_t seed);
std::vector<DecodedLikelihood> decode_all(const MultimodalModel& model, const DenseArray& z);
/// z ~ N(0, I), decoded to the likelihood mean of every modality.
std::vector<DenseArray> joint_generate(const MultimodalModel& model, std::size_t n, std::uint64_t seed);
/// One reparameterized draw from q(z | source obs) per item, decoded to the
/// target modality's likelihood mean.
DenseArray cross_generate(const MultimodalModel& model, std::size_t source, std::size_t target,
                          const DenseArray& obs, std::uint64_t seed);
/// One draw from the joint posterior per item, decoded to every modality.
std::vector<DenseArray> joint_reconstruct(const MultimodalModel& model, std::span<const DenseArray> obs,
                                          std::uint64_t seed);

}  // namespace cmvae
