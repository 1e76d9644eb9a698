#include "cmvae/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "cmvae/error.hpp"
#include "cmvae/random.hpp"
#include "cmvae/relatedness.hpp"

namespace cmvae {

EvaluationData EvaluationData::build(const FactorGenerator& gen, std::size_t items, std::uint64_t seed) {
  EvaluationData data;
  for (std::size_t m = 0; m < gen.maps.size(); ++m) data.oracles.emplace_back(gen, m);
  std::vector<UnimodalPool> pools = generate_pools(gen, items, derive_seed(seed, "test-pools"));
  const auto modalities = gen.spec.model_modalities();
  data.related = pair_related(modalities, pools, gen.spec.num_classes, 1, derive_seed(seed, "test-related"));
  data.mixed = pair_random(modalities, std::move(pools), gen.spec.num_classes, derive_seed(seed, "test-mixed"));
  return data;
}

double ridge_classifier_accuracy(const DenseArray& features, std::span<const std::size_t> labels,
                                 std::size_t num_classes, double ridge, double train_fraction,
                                 std::uint64_t split_seed) {
  const std::size_t n = features.rows();
  if (features.rank() != 2 || labels.size() != n) throw ShapeError("features and labels do not align");
  std::vector<std::size_t> present(labels.begin(), labels.end());
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (present.size() < 2) throw InvalidArgument("latent accuracy needs at least two classes");
  if (present.back() >= num_classes) throw InvalidArgument("label out of range");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw InvalidArgument("train/test split leaves an empty side");

  const auto F = static_cast<Eigen::Index>(features.cols() + 1);
  const auto C = static_cast<Eigen::Index>(num_classes);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n_train), F);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_train), C);
  for (std::size_t r = 0; r < n_train; ++r) {
    const std::size_t i = order[r];
    for (std::size_t c = 0; c < features.cols(); ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = features(i, c);
    X(static_cast<Eigen::Index>(r), F - 1) = 1.0;
    Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(labels[i])) = 1.0;
  }
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd W = gram.ldlt().solve(X.transpose() * Y);

  std::size_t hits = 0;
  Eigen::RowVectorXd x(F);
  for (std::size_t r = n_train; r < n; ++r) {
    const std::size_t i = order[r];
    for (std::size_t c = 0; c < features.cols(); ++c) x(static_cast<Eigen::Index>(c)) = features(i, c);
    x(F - 1) = 1.0;
    Eigen::Index best = 0;
    (x * W).maxCoeff(&best);
    hits += static_cast<std::size_t>(best) == labels[i] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n - n_train);
}

double latent_accuracy(const MultimodalModel& model, std::size_t modality, const DenseArray& obs,
                       std::span<const std::size_t> labels, std::size_t num_classes, const EvaluationConfig& config,
                       std::uint64_t seed) {
  const GaussianParams q = encode_unimodal(model, modality, obs);
  const std::size_t L = model.latent_dim();
  DenseArray z(q.mean.shape());
  const std::string& name = model.modality(modality).name;
  for (std::size_t i = 0; i < obs.rows(); ++i) {
    const std::vector<double> e = standard_normals(observation_seed(seed, name, obs.row(i)), L);
    for (std::size_t l = 0; l < L; ++l) z(i, l) = q.mean(i, l) + std::exp(0.5 * q.log_var(i, l)) * e[l];
  }
  return ridge_classifier_accuracy(z, labels, num_classes, config.ridge, config.train_fraction, config.split_seed);
}

double joint_coherence(const MultimodalModel& model, std::size_t n, std::span<const OracleClassifier> oracles,
                       std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("joint coherence needs at least one generation");
  if (oracles.size() != model.num_modalities()) throw InvalidArgument("expected one oracle per modality");
  const std::vector<DenseArray> generated = joint_generate(model, n, seed);
  std::vector<std::vector<std::size_t>> classes;
  for (std::size_t m = 0; m < generated.size(); ++m) classes.push_back(oracles[m].predict(generated[m]));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool same = true;
    for (std::size_t m = 1; m < classes.size(); ++m) same = same && classes[m][i] == classes[0][i];
    agree += same ? 1 : 0;
  }
  return 100.0 * static_cast<double>(agree) / static_cast<double>(n);
}

double cross_coherence(const MultimodalModel& model, std::size_t source, std::size_t target, const DenseArray& obs,
                       std::span<const std::size_t> labels, const OracleClassifier& target_oracle,
                       std::uint64_t seed) {
  if (labels.size() != obs.rows() || labels.empty()) throw ShapeError("labels do not match observations");
  const std::vector<std::size_t> predicted = target_oracle.predict(cross_generate(model, source, target, obs, seed));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double synergy_coherence(const MultimodalModel& model, std::span<const DenseArray> obs,
                         std::span<const std::size_t> labels, std::span<const OracleClassifier> oracles,
                         std::uint64_t seed) {
  if (model.joint_kind() == JointKind::MixtureOfExperts) {
    throw UnsupportedError("synergy coherence is not defined for the mixture-of-experts posterior");
  }
  if (oracles.size() != model.num_modalities()) throw InvalidArgument("expected one oracle per modality");
  if (obs.empty() || labels.size() != obs[0].rows() || labels.empty()) throw ShapeError("labels do not match observations");
  const std::vector<DenseArray> recon = joint_reconstruct(model, obs, seed);
  std::vector<std::vector<std::size_t>> classes;
  for (std::size_t m = 0; m < recon.size(); ++m) classes.push_back(oracles[m].predict(recon[m]));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bool all = true;
    for (const auto& c : classes) all = all && c[i] == labels[i];
    hits += all ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

Metrics evaluate(const MultimodalModel& model, const EvaluationData& data, const EvaluationConfig& config,
                 std::uint64_t seed) {
  if (model.num_modalities() != 2) throw UnsupportedError("the metric set is defined for two modalities");
  const PairedDataset& rel = data.related;
  const std::size_t C = rel.num_classes;
  Metrics m;
  m.latent_acc_m1 = latent_accuracy(model, 0, rel.pools[0].obs, rel.pools[0].labels, C, config, derive_seed(seed, "latent"));
  m.latent_acc_m2 = latent_accuracy(model, 1, rel.pools[1].obs, rel.pools[1].labels, C, config, derive_seed(seed, "latent"));
  m.joint_coh = joint_coherence(model, config.joint_samples, data.oracles, derive_seed(seed, "joint"));
  m.cross_coh_12 = cross_coherence(model, 0, 1, rel.pools[0].obs, rel.pools[0].labels, data.oracles[1], derive_seed(seed, "cross"));
  m.cross_coh_21 = cross_coherence(model, 1, 0, rel.pools[1].obs, rel.pools[1].labels, data.oracles[0], derive_seed(seed, "cross"));
  if (model.joint_kind() != JointKind::MixtureOfExperts) {
    std::vector<std::size_t> labels(rel.size());
    for (std::size_t p = 0; p < rel.size(); ++p) labels[p] = rel.label(0, p);
    m.synergy_coh = synergy_coherence(model, rel.all_observations(), labels, data.oracles, derive_seed(seed, "synergy"));
  }
  const std::vector<double> scores = pmi(model, data.mixed, config.pmi_samples, derive_seed(seed, "pmi"));
  double sum_rel = 0.0, sum_unrel = 0.0;
  std::size_t n_rel = 0, n_unrel = 0;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    if (data.mixed.related[p]) {
      sum_rel += scores[p];
      ++n_rel;
    } else {
      sum_unrel += scores[p];
      ++n_unrel;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.mean_pmi_related = n_rel > 0 ? sum_rel / static_cast<double>(n_rel) : nan;
  m.mean_pmi_unrelated = n_unrel > 0 ? sum_unrel / static_cast<double>(n_unrel) : nan;
  return m;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), v);
  return std::string(buffer, result.ptr);
}

void write_metrics_header(std::ostream& out) {
  out << "# cmvae metrics schema " << kMetricsSchemaVersion << '\n';
  out << "run_id,step,latent_acc_m1,latent_acc_m2,joint_coh,cross_coh_12,cross_coh_21,synergy_coh,"
         "mean_pmi_related,mean_pmi_unrelated\n";
}

void write_metrics_row(std::ostream& out, const std::string& run_id, std::size_t step, const Metrics& m) {
  out << run_id << ',' << step << ',' << format_number(m.latent_acc_m1) << ',' << format_number(m.latent_acc_m2) << ','
      << format_number(m.joint_coh) << ',' << format_number(m.cross_coh_12) << ',' << format_number(m.cross_coh_21)
      << ',' << (m.synergy_coh ? format_number(*m.synergy_coh) : std::string()) << ','
      << format_number(m.mean_pmi_related) << ',' << format_number(m.mean_pmi_unrelated) << '\n';
}

}  // namespace cmvae
