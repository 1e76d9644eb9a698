#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cmvae/dense_array.hpp"
#include "cmvae/model.hpp"

namespace cmvae {

struct ModalityFactorSpec {
  std::string name;
  std::size_t obs_dim = 16;
  std::size_t private_dim = 3;
  LikelihoodKind likelihood = LikelihoodKind::Bernoulli;
};

/// Observations are a random linear map of [one-hot(class); private factors]
/// plus isotropic noise, squashed through a sigmoid for Bernoulli modalities.
/// The shared class is the only factor common to all modalities.
struct FactorSpec {
  std::size_t num_classes = 5;
  std::vector<ModalityFactorSpec> modalities;
  double noise_scale = 0.1;
  double shared_scale = 1.5;
  double private_scale = 1.0;
  /// Fixes the mixing maps.
  std::uint64_t seed = 0;

  /// Two modalities: "m1" (Bernoulli) and "m2" (Gaussian), 16 dimensions each.
  static FactorSpec defaults(std::uint64_t seed = 0);
  void validate() const;
  std::vector<ModalitySpec> model_modalities() const;
};

inline constexpr int kMaxMapAttempts = 5;

/// Mixing maps drawn from a FactorSpec, each [obs_dim, classes + private_dim].
struct FactorGenerator {
  FactorSpec spec;
  std::vector<DenseArray> maps;
  /// Attempts needed per modality to get a map of full rank on the class block.
  std::vector<int> attempts;

  explicit FactorGenerator(FactorSpec spec);
};

/// Whether the first `classes` columns of `map` are linearly independent.
bool shared_block_full_rank(const DenseArray& map, std::size_t classes);

struct UnimodalPool {
  DenseArray obs;                    // [n, obs_dim]
  std::vector<std::size_t> labels;  // class per item
  std::size_t size() const { return labels.size(); }
};

/// Balanced classes (i mod C, shuffled), standard normal private factors.
UnimodalPool generate_unimodal(const FactorGenerator& gen, std::size_t n, std::size_t modality, std::uint64_t seed);
std::vector<UnimodalPool> generate_pools(const FactorGenerator& gen, std::size_t n, std::uint64_t seed);

/// Tuples of items drawn from per-modality pools. Modality 0 is the anchor.
struct PairedDataset {
  std::size_t num_classes = 0;
  std::vector<ModalitySpec> modalities;
  std::vector<UnimodalPool> pools;
  std::vector<std::vector<std::size_t>> pairs;  // [M][P] pool rows
  std::vector<std::uint8_t> related;            // per pair
  /// Pairing density used by pair_related (0 for random pairings).
  std::size_t pairs_per_instance = 0;
  std::uint64_t pairing_seed = 0;

  std::size_t size() const { return related.size(); }
  std::size_t num_modalities() const { return pools.size(); }
  /// Observations of the given pairs, one [rows, dim] array per modality.
  std::vector<DenseArray> observations(std::span<const std::size_t> rows) const;
  std::vector<DenseArray> all_observations() const;
  std::size_t label(std::size_t modality, std::size_t pair) const { return pools[modality].labels[pairs[modality][pair]]; }
  std::size_t related_count() const;
  void validate() const;
};

/// Every anchor item is paired with `pairs_per_instance` same-class items
/// of each other modality (without replacement when the class pool allows).
PairedDataset pair_related(std::vector<ModalitySpec> modalities, std::vector<UnimodalPool> pools,
                           std::size_t num_classes, std::size_t pairs_per_instance, std::uint64_t seed);
/// Every anchor item is paired with a uniformly random item of each other modality.
PairedDataset pair_random(std::vector<ModalitySpec> modalities, std::vector<UnimodalPool> pools,
                          std::size_t num_classes, std::uint64_t seed);
/// Concatenates datasets over the same modalities, re-indexing pools.
PairedDataset concatenate(std::span<const PairedDataset> parts);

/// Stratified sample of `percent` of a pool's items per class, in index order.
std::vector<std::size_t> stratified_subset(std::span<const std::size_t> labels, std::size_t num_classes,
                                           double percent, std::uint64_t seed);
UnimodalPool select(const UnimodalPool& pool, std::span<const std::size_t> rows);
/// Indices of [0, n) not in `kept` (which must be sorted).
std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> kept);

/// Keeps `percent` of each pool, then re-pairs with the dataset's pairing
/// density and seed. 100% returns the same pairs.
PairedDataset subset(const PairedDataset& ds, double percent, std::uint64_t seed);

/// Bayes-optimal classifier for the class of one modality, built from the
/// generator's maps (linear discriminant in pre-activation space).
class OracleClassifier {
 public:
  OracleClassifier(const FactorGenerator& gen, std::size_t modality);
  std::vector<std::size_t> predict(const DenseArray& obs) const;
  /// Fraction of items classified correctly.
  double accuracy(const DenseArray& obs, std::span<const std::size_t> labels) const;

 private:
  LikelihoodKind likelihood_;
  std::size_t classes_;
  std::size_t dim_;
  DenseArray weights_;  // [C, D] rows of Sigma^-1 mu_c
  std::vector<double> offsets_;
};

// Binary file: "CMDS", u32 version, u32 classes, u32 modalities, per
// modality {u32 name length, name, u32 likelihood, u64 items, u64 dim}, then
// per modality observations (f64) and labels (u64), then u64 pair count,
// u64 pairs_per_instance, u64 pairing seed, pair rows (u64) and flags (u8).
inline constexpr std::uint32_t kDatasetVersion = 1;
void write_dataset(std::ostream& out, const PairedDataset& ds);
PairedDataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const PairedDataset& ds);
PairedDataset load_dataset(const std::filesystem::path& path);
/// One row per pair: pair, index per modality, related, label per modality.
void write_dataset_csv(std::ostream& out, const PairedDataset& ds);

}  // namespace cmvae
