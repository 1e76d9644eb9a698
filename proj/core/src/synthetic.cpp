#include "cmvae/synthetic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/random.hpp"

namespace cmvae {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLogitEpsilon = 1e-12;

std::vector<std::vector<std::size_t>> members_by_class(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<std::vector<std::size_t>> out(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range");
    out[labels[i]].push_back(i);
  }
  return out;
}

void check_pools(const std::vector<ModalitySpec>& modalities, const std::vector<UnimodalPool>& pools) {
  if (pools.size() < 2 || pools.size() != modalities.size()) {
    throw InvalidArgument("expected at least two pools, one per modality");
  }
  for (std::size_t m = 0; m < pools.size(); ++m) {
    if (pools[m].obs.rows() != pools[m].size() || (pools[m].size() > 0 && pools[m].obs.cols() != modalities[m].obs_dim)) {
      throw ShapeError("pool of modality '" + modalities[m].name + "' has inconsistent shape " +
                       shape_string(pools[m].obs.shape()));
    }
  }
}

void mark_related(PairedDataset& ds) {
  ds.related.assign(ds.pairs[0].size(), 1);
  for (std::size_t p = 0; p < ds.related.size(); ++p)
    for (std::size_t m = 1; m < ds.pools.size(); ++m)
      if (ds.label(m, p) != ds.label(0, p)) ds.related[p] = 0;
}

}  // namespace

FactorSpec FactorSpec::defaults(std::uint64_t seed) {
  FactorSpec spec;
  spec.seed = seed;
  spec.modalities = {{"m1", 16, 3, LikelihoodKind::Bernoulli}, {"m2", 16, 3, LikelihoodKind::Gaussian}};
  return spec;
}

void FactorSpec::validate() const {
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (modalities.size() < 2) throw ConfigError("need at least two modalities");
  if (!(noise_scale >= 0.0) || !(shared_scale > 0.0) || !(private_scale >= 0.0)) {
    throw ConfigError("scales must be non-negative (shared scale positive)");
  }
  for (const ModalityFactorSpec& m : modalities) {
    if (m.obs_dim < num_classes) {
      throw ConfigError("modality '" + m.name + "' has fewer dimensions than classes; the class block cannot be full rank");
    }
  }
}

std::vector<ModalitySpec> FactorSpec::model_modalities() const {
  std::vector<ModalitySpec> out;
  for (const ModalityFactorSpec& m : modalities) out.push_back({m.name, m.obs_dim, m.likelihood});
  return out;
}

bool shared_block_full_rank(const DenseArray& map, std::size_t classes) {
  if (map.rank() != 2 || map.cols() < classes) throw ShapeError("map has no class block of width " + std::to_string(classes));
  Eigen::Map<const RowMatrix> full(map.data().data(), static_cast<Eigen::Index>(map.rows()),
                                   static_cast<Eigen::Index>(map.cols()));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(full.leftCols(static_cast<Eigen::Index>(classes)));
  return lu.rank() == static_cast<Eigen::Index>(classes);
}

FactorGenerator::FactorGenerator(FactorSpec s) : spec(std::move(s)) {
  spec.validate();
  const std::size_t C = spec.num_classes;
  for (const ModalityFactorSpec& m : spec.modalities) {
    const std::uint64_t base = derive_seed(spec.seed, m.name);
    bool ok = false;
    for (int attempt = 0; attempt < kMaxMapAttempts && !ok; ++attempt) {
      Rng rng(derive_seed(base, static_cast<std::uint64_t>(attempt)));
      std::normal_distribution<double> normal(0.0, 1.0);
      DenseArray map(Shape{m.obs_dim, C + m.private_dim});
      for (std::size_t d = 0; d < m.obs_dim; ++d)
        for (std::size_t k = 0; k < C + m.private_dim; ++k)
          map(d, k) = normal(rng) * (k < C ? spec.shared_scale : spec.private_scale);
      if (shared_block_full_rank(map, C)) {
        maps.push_back(std::move(map));
        attempts.push_back(attempt + 1);
        ok = true;
      }
    }
    if (!ok) throw NumericalError("could not draw a full-rank map for modality '" + m.name + "'");
  }
}

UnimodalPool generate_unimodal(const FactorGenerator& gen, std::size_t n, std::size_t modality, std::uint64_t seed) {
  const FactorSpec& spec = gen.spec;
  if (modality >= spec.modalities.size()) throw InvalidArgument("modality index out of range");
  const std::size_t C = spec.num_classes;
  if (n < C) throw InvalidArgument("need at least one item per class");
  const ModalityFactorSpec& ms = spec.modalities[modality];
  const DenseArray& map = gen.maps[modality];
  const std::size_t D = ms.obs_dim, P = ms.private_dim;

  Rng rng(derive_seed(seed, ms.name));
  UnimodalPool pool;
  pool.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) pool.labels[i] = i % C;
  std::shuffle(pool.labels.begin(), pool.labels.end(), rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  pool.obs = DenseArray(Shape{n, D});
  std::vector<double> priv(P);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& s : priv) s = normal(rng);
    for (std::size_t d = 0; d < D; ++d) {
      double u = map(d, pool.labels[i]);
      for (std::size_t k = 0; k < P; ++k) u += map(d, C + k) * priv[k];
      u += spec.noise_scale * normal(rng);
      pool.obs(i, d) = ms.likelihood == LikelihoodKind::Bernoulli ? std::clamp(stable_sigmoid(u), 0.0, 1.0) : u;
    }
  }
  return pool;
}

std::vector<UnimodalPool> generate_pools(const FactorGenerator& gen, std::size_t n, std::uint64_t seed) {
  std::vector<UnimodalPool> out;
  for (std::size_t m = 0; m < gen.spec.modalities.size(); ++m) out.push_back(generate_unimodal(gen, n, m, seed));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<DenseArray> PairedDataset::observations(std::span<const std::size_t> rows) const {
  std::vector<DenseArray> out;
  for (std::size_t m = 0; m < pools.size(); ++m) {
    const std::size_t D = modalities[m].obs_dim;
    DenseArray x(Shape{rows.size(), D});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= size()) throw InvalidArgument("pair index out of range");
      std::span<const double> src = pools[m].obs.row(pairs[m][rows[r]]);
      std::copy(src.begin(), src.end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * D));
    }
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<DenseArray> PairedDataset::all_observations() const {
  std::vector<std::size_t> rows(size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return observations(rows);
}

std::size_t PairedDataset::related_count() const {
  return static_cast<std::size_t>(std::count(related.begin(), related.end(), std::uint8_t{1}));
}

void PairedDataset::validate() const {
  check_pools(modalities, pools);
  if (pairs.size() != pools.size()) throw FormatError("pair table does not match the modality count");
  for (std::size_t m = 0; m < pools.size(); ++m) {
    if (pairs[m].size() != related.size()) throw FormatError("pair table columns differ in length");
    for (std::size_t i : pairs[m])
      if (i >= pools[m].size()) throw FormatError("pair refers to a missing item");
    for (std::size_t c : pools[m].labels)
      if (c >= num_classes) throw FormatError("label out of range");
  }
  for (std::size_t p = 0; p < related.size(); ++p) {
    bool same = true;
    for (std::size_t m = 1; m < pools.size(); ++m) same = same && label(m, p) == label(0, p);
    if (related[p] != (same ? 1 : 0)) throw FormatError("relatedness flag disagrees with labels");
  }
}

PairedDataset pair_related(std::vector<ModalitySpec> modalities, std::vector<UnimodalPool> pools,
                           std::size_t num_classes, std::size_t pairs_per_instance, std::uint64_t seed) {
  check_pools(modalities, pools);
  if (pairs_per_instance == 0) throw InvalidArgument("pairs per instance must be positive");
  PairedDataset ds;
  ds.num_classes = num_classes;
  ds.pairs_per_instance = pairs_per_instance;
  ds.pairing_seed = seed;
  ds.pairs.resize(pools.size());
  const std::size_t n = pools[0].size();
  ds.pairs[0].reserve(n * pairs_per_instance);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < pairs_per_instance; ++k) ds.pairs[0].push_back(i);
  for (std::size_t m = 1; m < pools.size(); ++m) {
    const auto members = members_by_class(pools[m].labels, num_classes);
    Rng rng(derive_seed(seed, modalities[m].name));
    auto& column = ds.pairs[m];
    column.reserve(n * pairs_per_instance);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = pools[0].labels[i];
      if (c >= num_classes) throw InvalidArgument("anchor label out of range");
      const auto& pool = members[c];
      if (pool.empty()) {
        throw InvalidArgument("class " + std::to_string(c) + " is absent from modality '" + modalities[m].name + "'");
      }
      if (pool.size() >= pairs_per_instance) {
        for (std::size_t j : sample_without_replacement(rng, pool.size(), pairs_per_instance, pool.size()))
          column.push_back(pool[j]);
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        for (std::size_t k = 0; k < pairs_per_instance; ++k) column.push_back(pool[pick(rng)]);
      }
    }
  }
  ds.modalities = std::move(modalities);
  ds.pools = std::move(pools);
  mark_related(ds);
  return ds;
}

PairedDataset pair_random(std::vector<ModalitySpec> modalities, std::vector<UnimodalPool> pools,
                          std::size_t num_classes, std::uint64_t seed) {
  check_pools(modalities, pools);
  PairedDataset ds;
  ds.num_classes = num_classes;
  ds.pairing_seed = seed;
  ds.pairs.resize(pools.size());
  const std::size_t n = pools[0].size();
  ds.pairs[0].resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.pairs[0][i] = i;
  for (std::size_t m = 1; m < pools.size(); ++m) {
    if (n > 0 && pools[m].size() == 0) throw InvalidArgument("cannot pair with an empty pool");
    Rng rng(derive_seed(seed, modalities[m].name));
    ds.pairs[m].resize(n);
    if (n == 0) continue;
    std::uniform_int_distribution<std::size_t> pick(0, pools[m].size() - 1);
    for (std::size_t& j : ds.pairs[m]) j = pick(rng);
  }
  ds.modalities = std::move(modalities);
  ds.pools = std::move(pools);
  mark_related(ds);
  return ds;
}

PairedDataset concatenate(std::span<const PairedDataset> parts) {
  if (parts.empty()) throw InvalidArgument("nothing to concatenate");
  PairedDataset out;
  out.num_classes = parts[0].num_classes;
  out.modalities = parts[0].modalities;
  const std::size_t M = parts[0].num_modalities();
  out.pools.resize(M);
  out.pairs.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> values;
    std::size_t offset = 0;
    for (const PairedDataset& part : parts) {
      if (part.num_modalities() != M || part.modalities[m].name != out.modalities[m].name ||
          part.modalities[m].obs_dim != out.modalities[m].obs_dim || part.num_classes != out.num_classes) {
        throw InvalidArgument("datasets to concatenate have different modalities");
      }
      const UnimodalPool& pool = part.pools[m];
      values.insert(values.end(), pool.obs.values().begin(), pool.obs.values().end());
      out.pools[m].labels.insert(out.pools[m].labels.end(), pool.labels.begin(), pool.labels.end());
      for (std::size_t i : part.pairs[m]) out.pairs[m].push_back(i + offset);
      offset += pool.size();
    }
    out.pools[m].obs = DenseArray(Shape{offset, out.modalities[m].obs_dim}, std::move(values));
  }
  for (const PairedDataset& part : parts) out.related.insert(out.related.end(), part.related.begin(), part.related.end());
  return out;
}

std::vector<std::size_t> stratified_subset(std::span<const std::size_t> labels, std::size_t num_classes,
                                           double percent, std::uint64_t seed) {
  if (!(percent > 0.0) || percent > 100.0) throw InvalidArgument("percent must be in (0, 100]");
  auto members = members_by_class(labels, num_classes);
  Rng rng(seed);
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& pool = members[c];
    if (pool.empty()) continue;
    const auto count = static_cast<std::size_t>(std::llround(static_cast<double>(pool.size()) * percent / 100.0));
    if (count == 0) {
      throw InvalidArgument("a " + std::to_string(percent) + "% subset leaves class " + std::to_string(c) + " empty");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    kept.insert(kept.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(count, pool.size())));
  }
  if (kept.size() < num_classes) throw InvalidArgument("subset has fewer items than classes");
  std::sort(kept.begin(), kept.end());
  return kept;
}

UnimodalPool select(const UnimodalPool& pool, std::span<const std::size_t> rows) {
  UnimodalPool out;
  const std::size_t D = pool.obs.cols();
  std::vector<double> values;
  values.reserve(rows.size() * D);
  for (std::size_t r : rows) {
    if (r >= pool.size()) throw InvalidArgument("pool row out of range");
    std::span<const double> src = pool.obs.row(r);
    values.insert(values.end(), src.begin(), src.end());
    out.labels.push_back(pool.labels[r]);
  }
  out.obs = DenseArray(Shape{rows.size(), D}, std::move(values));
  return out;
}

std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> kept) {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < kept.size() && kept[k] == i) {
      ++k;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

PairedDataset subset(const PairedDataset& ds, double percent, std::uint64_t seed) {
  std::vector<UnimodalPool> pools;
  for (std::size_t m = 0; m < ds.num_modalities(); ++m) {
    const auto kept = stratified_subset(ds.pools[m].labels, ds.num_classes, percent,
                                        derive_seed(seed, static_cast<std::uint64_t>(m)));
    pools.push_back(select(ds.pools[m], kept));
  }
  if (ds.pairs_per_instance == 0) return pair_random(ds.modalities, std::move(pools), ds.num_classes, ds.pairing_seed);
  return pair_related(ds.modalities, std::move(pools), ds.num_classes, ds.pairs_per_instance, ds.pairing_seed);
}

// ---------------------------------------------------------------------------

OracleClassifier::OracleClassifier(const FactorGenerator& gen, std::size_t modality) {
  if (modality >= gen.maps.size()) throw InvalidArgument("modality index out of range");
  const ModalityFactorSpec& ms = gen.spec.modalities[modality];
  likelihood_ = ms.likelihood;
  classes_ = gen.spec.num_classes;
  dim_ = ms.obs_dim;
  const DenseArray& map = gen.maps[modality];
  Eigen::Map<const RowMatrix> full(map.data().data(), static_cast<Eigen::Index>(map.rows()),
                                   static_cast<Eigen::Index>(map.cols()));
  const auto C = static_cast<Eigen::Index>(classes_);
  const Eigen::MatrixXd means = full.leftCols(C);
  const Eigen::MatrixXd priv = full.rightCols(full.cols() - C);
  Eigen::MatrixXd cov = priv * priv.transpose();
  const double noise_var = std::max(gen.spec.noise_scale * gen.spec.noise_scale, 1e-9);
  cov.diagonal().array() += noise_var;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const Eigen::MatrixXd solved = ldlt.solve(means);  // [D, C]
  weights_ = DenseArray(Shape{classes_, dim_});
  offsets_.resize(classes_);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(dim_); ++d)
      weights_(static_cast<std::size_t>(c), static_cast<std::size_t>(d)) = solved(d, c);
    offsets_[static_cast<std::size_t>(c)] = -0.5 * means.col(c).dot(solved.col(c));
  }
}

std::vector<std::size_t> OracleClassifier::predict(const DenseArray& obs) const {
  if (obs.rank() != 2 || obs.cols() != dim_) {
    throw ShapeError("classifier expects [n," + std::to_string(dim_) + "], got " + shape_string(obs.shape()));
  }
  std::vector<std::size_t> out(obs.rows());
  std::vector<double> u(dim_);
  for (std::size_t i = 0; i < obs.rows(); ++i) {
    for (std::size_t d = 0; d < dim_; ++d) {
      const double x = obs(i, d);
      if (likelihood_ == LikelihoodKind::Bernoulli) {
        const double p = std::clamp(x, kLogitEpsilon, 1.0 - kLogitEpsilon);
        u[d] = std::log(p) - std::log1p(-p);
      } else {
        u[d] = x;
      }
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes_; ++c) {
      double score = offsets_[c];
      for (std::size_t d = 0; d < dim_; ++d) score += weights_(c, d) * u[d];
      if (score > best) {
        best = score;
        out[i] = c;
      }
    }
  }
  return out;
}

double OracleClassifier::accuracy(const DenseArray& obs, std::span<const std::size_t> labels) const {
  if (labels.size() != obs.rows()) throw ShapeError("label count does not match observations");
  if (labels.empty()) throw InvalidArgument("no items to classify");
  const auto predicted = predict(obs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace cmvae
