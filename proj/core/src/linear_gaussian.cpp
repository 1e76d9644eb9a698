#include "cmvae/linear_gaussian.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/random.hpp"

namespace cmvae {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd to_eigen(const DenseArray& a) {
  return Eigen::Map<const RowMatrix>(a.data().data(), static_cast<Eigen::Index>(a.rows()),
                                     static_cast<Eigen::Index>(a.cols()));
}

DenseArray from_eigen(const Eigen::MatrixXd& m) {
  DenseArray out(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return out;
}

// Diagonal of (I + sum_m A_m^T A_m / s_m)^-1, or throws when it is not diagonal.
Eigen::VectorXd diagonal_posterior(const std::vector<Eigen::MatrixXd>& loadings, const std::vector<double>& noise,
                                   std::size_t latent) {
  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(latent), static_cast<Eigen::Index>(latent));
  for (std::size_t m = 0; m < loadings.size(); ++m) precision += loadings[m].transpose() * loadings[m] / noise[m];
  const double scale = precision.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index r = 0; r < precision.rows(); ++r)
    for (Eigen::Index c = 0; c < precision.cols(); ++c)
      if (r != c && std::abs(precision(r, c)) > 1e-12 * scale)
        throw InvalidArgument("posterior covariance is not diagonal; use orthogonal loading columns");
  return precision.diagonal().cwiseInverse();
}

}  // namespace

LinearGaussianOracle::LinearGaussianOracle(std::vector<DenseArray> loadings, std::vector<double> noise_var)
    : loadings_(std::move(loadings)), noise_var_(std::move(noise_var)) {
  if (loadings_.size() < 2 || loadings_.size() != noise_var_.size()) {
    throw InvalidArgument("need at least two modalities with one noise variance each");
  }
  latent_ = loadings_[0].cols();
  for (std::size_t m = 0; m < loadings_.size(); ++m) {
    if (loadings_[m].rank() != 2 || loadings_[m].cols() != latent_ || loadings_[m].rows() == 0) {
      throw ShapeError("loading matrices must be [D_m, L] with a common L");
    }
    if (!(noise_var_[m] > 0.0)) throw InvalidArgument("noise variance must be positive");
  }
}

LinearGaussianOracle LinearGaussianOracle::bivariate(double correlation) {
  if (!(correlation >= 0.0 && correlation < 1.0)) throw InvalidArgument("correlation must be in [0, 1)");
  const double a = std::sqrt(correlation / (1.0 - correlation));
  return LinearGaussianOracle({DenseArray::matrix(1, 1, {a}), DenseArray::matrix(1, 1, {a})}, {1.0, 1.0});
}

DenseArray LinearGaussianOracle::joint_covariance() const {
  std::size_t total = 0;
  for (const DenseArray& a : loadings_) total += a.rows();
  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(latent_));
  Eigen::VectorXd noise(static_cast<Eigen::Index>(total));
  Eigen::Index offset = 0;
  for (std::size_t m = 0; m < loadings_.size(); ++m) {
    const auto rows = static_cast<Eigen::Index>(loadings_[m].rows());
    stacked.middleRows(offset, rows) = to_eigen(loadings_[m]);
    noise.segment(offset, rows).setConstant(noise_var_[m]);
    offset += rows;
  }
  Eigen::MatrixXd cov = stacked * stacked.transpose();
  cov.diagonal() += noise;
  return from_eigen(cov);
}

std::vector<double> LinearGaussianOracle::log_density(const DenseArray& cov, const DenseArray& obs) const {
  const Eigen::MatrixXd sigma = to_eigen(cov);
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
  const auto D = static_cast<Eigen::Index>(cov.rows());
  if (obs.rank() != 2 || obs.cols() != cov.rows()) throw ShapeError("observation width does not match the covariance");
  const Eigen::MatrixXd L = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < D; ++i) log_det += 2.0 * std::log(L(i, i));
  std::vector<double> out(obs.rows());
  for (std::size_t r = 0; r < obs.rows(); ++r) {
    Eigen::VectorXd x(D);
    for (Eigen::Index d = 0; d < D; ++d) x(d) = obs(r, static_cast<std::size_t>(d));
    const Eigen::VectorXd w = llt.matrixL().solve(x);
    out[r] = -0.5 * (static_cast<double>(D) * kLog2Pi + log_det + w.squaredNorm());
  }
  return out;
}

std::vector<double> LinearGaussianOracle::log_joint(std::span<const DenseArray> obs) const {
  if (obs.size() != loadings_.size()) throw InvalidArgument("expected one observation array per modality");
  const std::size_t n = obs[0].rows();
  std::size_t total = 0;
  for (std::size_t m = 0; m < obs.size(); ++m) {
    if (obs[m].rows() != n || obs[m].cols() != loadings_[m].rows()) throw ShapeError("observation shapes do not match the oracle");
    total += obs[m].cols();
  }
  DenseArray joined(Shape{n, total});
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t offset = 0;
    for (const DenseArray& x : obs) {
      for (std::size_t d = 0; d < x.cols(); ++d) joined(r, offset + d) = x(r, d);
      offset += x.cols();
    }
  }
  return log_density(joint_covariance(), joined);
}

std::vector<double> LinearGaussianOracle::log_marginal(std::size_t modality, const DenseArray& obs) const {
  const Eigen::MatrixXd a = to_eigen(loading(modality));
  Eigen::MatrixXd cov = a * a.transpose();
  cov.diagonal().array() += noise_var_[modality];
  return log_density(from_eigen(cov), obs);
}

std::vector<double> LinearGaussianOracle::pmi(std::span<const DenseArray> obs) const {
  if (loadings_.size() != 2) throw UnsupportedError("pointwise mutual information needs exactly two modalities");
  std::vector<double> out = log_joint(obs);
  const std::vector<double> px = log_marginal(0, obs[0]);
  const std::vector<double> py = log_marginal(1, obs[1]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= px[i] + py[i];
  return out;
}

std::vector<DenseArray> LinearGaussianOracle::sample(std::size_t n, std::uint64_t seed) const {
  const std::vector<double> z = standard_normals(derive_seed(seed, "latent"), n * latent_);
  std::vector<DenseArray> out;
  for (std::size_t m = 0; m < loadings_.size(); ++m) {
    const DenseArray& a = loadings_[m];
    const std::size_t D = a.rows();
    const std::vector<double> e = standard_normals(derive_seed(seed, static_cast<std::uint64_t>(m)), n * D);
    const double sd = std::sqrt(noise_var_[m]);
    DenseArray x(Shape{n, D});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < D; ++d) {
        double v = sd * e[i * D + d];
        for (std::size_t l = 0; l < latent_; ++l) v += a(d, l) * z[i * latent_ + l];
        x(i, d) = v;
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

MultimodalModel LinearGaussianOracle::exact_model(Perturbation perturbation) const {
  const std::size_t M = loadings_.size();
  const std::size_t L = latent_;
  std::vector<ModalitySpec> specs;
  for (std::size_t m = 0; m < M; ++m) {
    specs.push_back({"x" + std::to_string(m + 1), loadings_[m].rows(), LikelihoodKind::Gaussian});
    if (std::log(noise_var_[m]) < kLogVarFloor) throw InvalidArgument("noise variance below the decoder floor");
  }
  MultimodalModel model(specs, JointKind::ExplicitJoint, ArchitectureSpec{L, 0, 0}, 0);
  ParameterStore& p = model.parameters();

  std::vector<Eigen::MatrixXd> a;
  for (const DenseArray& l : loadings_) a.push_back(to_eigen(l));

  // Posterior mean is S * sum_m A_m^T x_m / s_m with diagonal covariance S.
  auto fill_encoder = [&](const std::string& prefix, const std::vector<std::size_t>& members,
                          const Eigen::VectorXd& post_var, double shift, double widen) {
    DenseArray& w = p.at(MultimodalModel::layer_weight(prefix, 0));
    DenseArray& b = p.at(MultimodalModel::layer_bias(prefix, 0));
    std::size_t offset = 0;
    for (std::size_t m : members) {
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t d = 0; d < loadings_[m].rows(); ++d)
          w(l, offset + d) = post_var(static_cast<Eigen::Index>(l)) * a[m](static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(l)) / noise_var_[m];
      offset += loadings_[m].rows();
    }
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t c = 0; c < w.cols(); ++c) w(L + l, c) = 0.0;
      b[l] = shift;
      b[L + l] = std::log(post_var(static_cast<Eigen::Index>(l))) + widen;
    }
  };

  std::vector<std::size_t> everyone(M);
  for (std::size_t m = 0; m < M; ++m) everyone[m] = m;
  fill_encoder(MultimodalModel::joint_encoder_prefix(), everyone, diagonal_posterior(a, noise_var_, L),
               perturbation.mean_shift, perturbation.log_var_shift);
  for (std::size_t m = 0; m < M; ++m) {
    fill_encoder(MultimodalModel::encoder_prefix(specs[m].name), {m},
                 diagonal_posterior({a[m]}, {noise_var_[m]}, L), 0.0, 0.0);
    DenseArray& w = p.at(MultimodalModel::layer_weight(MultimodalModel::decoder_prefix(specs[m].name), 0));
    w = loadings_[m];
    for (double& v : p.at(MultimodalModel::layer_bias(MultimodalModel::decoder_prefix(specs[m].name), 0)).data()) v = 0.0;
    for (double& v : p.at(MultimodalModel::decoder_log_var(specs[m].name)).data()) v = std::log(noise_var_[m]);
  }
  return model;
}

}  // namespace cmvae
