#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmvae/error.hpp"
#include "cmvae/estimators.hpp"
#include "cmvae/linear_gaussian.hpp"
#include "cmvae/numerics.hpp"

using namespace cmvae;

namespace {

// One-dimensional modalities, q(z | .) = N(0, 1) and unit-Gaussian decoders that ignore z.
MultimodalModel prior_model(JointKind kind) {
  MultimodalModel model({{"x", 1, LikelihoodKind::Gaussian}, {"y", 1, LikelihoodKind::Gaussian}}, kind, {1, 1, 4}, 5);
  model.zero_output_layers();
  return model;
}

MultimodalModel random_model(JointKind kind, std::uint64_t seed) {
  return MultimodalModel({{"a", 3, LikelihoodKind::Bernoulli}, {"b", 2, LikelihoodKind::Gaussian}}, kind, {2, 1, 5},
                         seed);
}

std::vector<DenseArray> random_obs(std::size_t n, std::uint64_t seed) {
  std::vector<double> a = standard_normals(derive_seed(seed, "a"), n * 3);
  for (double& v : a) v = stable_sigmoid(2.0 * v);
  return {DenseArray(Shape{n, 3}, std::move(a)), DenseArray(Shape{n, 2}, standard_normals(derive_seed(seed, "b"), n * 2))};
}

const JointKind kAllKinds[] = {JointKind::ExplicitJoint, JointKind::ProductOfExperts, JointKind::MixtureOfExperts};

}  // namespace

TEST_CASE("prior proposal with z-independent decoders") {
  const std::vector<DenseArray> origin{DenseArray(Shape{1, 1}), DenseArray(Shape{1, 1})};
  for (JointKind kind : {JointKind::ExplicitJoint, JointKind::MixtureOfExperts}) {
    const MultimodalModel model = prior_model(kind);
    CHECK(elbo(model, origin, 10, 1)[0] == doctest::Approx(-1.837877066409345).epsilon(1e-14));
    CHECK(iwae(model, origin, 10, 1)[0] == doctest::Approx(-1.837877066409345).epsilon(1e-14));
    CHECK(cubo(model, origin, 10, 1)[0] == doctest::Approx(-1.837877066409345).epsilon(1e-14));
    CHECK(unimodal_marginal(model, 0, origin[0], 10, 1)[0] == doctest::Approx(-0.918938533204673).epsilon(1e-14));
  }
}

TEST_CASE("estimators are exact at the exact posterior") {
  const LinearGaussianOracle oracle(
      {DenseArray::matrix(2, 2, {1.0, 0.0, 0.0, 2.0}), DenseArray::matrix(1, 2, {0.5, 0.0})}, {0.3, 0.7});
  const MultimodalModel model = oracle.exact_model();
  const std::vector<DenseArray> obs = oracle.sample(20, 2);
  const std::vector<double> exact = oracle.log_joint(obs);
  for (std::size_t k : {1u, 7u, 30u}) {
    const auto e = elbo(model, obs, k, 3), i = iwae(model, obs, k, 3), c = cubo(model, obs, k, 3);
    for (std::size_t n = 0; n < exact.size(); ++n) {
      CHECK(std::abs(e[n] - exact[n]) < 1e-9);
      CHECK(std::abs(i[n] - exact[n]) < 1e-9);
      CHECK(std::abs(c[n] - exact[n]) < 1e-9);
    }
  }
  const auto marginal = unimodal_marginal(model, 1, obs[1], 5, 3);
  const auto exact_marginal = oracle.log_marginal(1, obs[1]);
  for (std::size_t n = 0; n < exact.size(); ++n) CHECK(std::abs(marginal[n] - exact_marginal[n]) < 1e-9);
}

TEST_CASE("unimodal marginal of the one-dimensional oracle") {
  const LinearGaussianOracle oracle({DenseArray::matrix(1, 1, {1.0}), DenseArray::matrix(1, 1, {1.0})}, {1.0, 1.0});
  const DenseArray origin(Shape{1, 1});
  CHECK(oracle.log_marginal(0, origin)[0] == doctest::Approx(-1.265512123484645).epsilon(1e-12));
  CHECK(unimodal_marginal(oracle.exact_model(), 0, origin, 30, 4)[0] ==
        doctest::Approx(-1.265512123484645).epsilon(1e-12));
  CHECK_THROWS_AS(unimodal_marginal(oracle.exact_model(), 4, origin, 30, 4), InvalidArgument);
}

TEST_CASE("a single draw makes every estimator the same log weight") {
  for (JointKind kind : {JointKind::ExplicitJoint, JointKind::ProductOfExperts}) {
    const MultimodalModel model = random_model(kind, 3);
    const auto obs = random_obs(6, 1);
    const auto e = elbo(model, obs, 1, 9), i = iwae(model, obs, 1, 9), c = cubo(model, obs, 1, 9);
    for (std::size_t n = 0; n < 6; ++n) {
      CHECK(e[n] == doctest::Approx(i[n]).epsilon(1e-13));
      CHECK(c[n] == doctest::Approx(i[n]).epsilon(1e-13));
    }
  }
}

TEST_CASE("with shared draws every item satisfies elbo <= iwae <= cubo") {
  for (JointKind kind : kAllKinds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const MultimodalModel model = random_model(kind, seed);
      const auto obs = random_obs(10, seed + 100);
      const std::size_t per = kind == JointKind::MixtureOfExperts ? 5 : 10;
      const auto e = elbo(model, obs, per, seed), i = iwae(model, obs, 10, seed), c = cubo(model, obs, 10, seed);
      for (std::size_t n = 0; n < 10; ++n) {
        CHECK(e[n] <= i[n] + 1e-12);
        CHECK(i[n] <= c[n] + 1e-12);
      }
    }
  }
}

TEST_CASE("estimates do not depend on batch order or batch companions") {
  for (JointKind kind : kAllKinds) {
    const MultimodalModel model = random_model(kind, 4);
    const auto obs = random_obs(6, 5);
    std::vector<DenseArray> rev;
    for (const DenseArray& a : obs) {
      DenseArray r(a.shape());
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t c = 0; c < a.cols(); ++c) r(i, c) = a(a.rows() - 1 - i, c);
      rev.push_back(r);
    }
    const auto forward = iwae(model, obs, 4, 7);
    const auto backward = iwae(model, rev, 4, 7);
    for (std::size_t i = 0; i < 6; ++i) CHECK(forward[i] == backward[5 - i]);
    const std::vector<DenseArray> first{DenseArray(Shape{1, 3}, std::vector<double>(obs[0].row(0).begin(), obs[0].row(0).end())),
                                        DenseArray(Shape{1, 2}, std::vector<double>(obs[1].row(0).begin(), obs[1].row(0).end()))};
    // The matrix kernels may sum in a different order for another batch size.
    CHECK(iwae(model, first, 4, 7)[0] == doctest::Approx(forward[0]).epsilon(1e-13));
    CHECK(iwae(model, obs, 4, 7) == forward);
  }
}

TEST_CASE("mixture estimators need sample counts divisible by the modality count") {
  const MultimodalModel model = random_model(JointKind::MixtureOfExperts, 1);
  const auto obs = random_obs(2, 1);
  CHECK_THROWS_AS(iwae(model, obs, 5, 1), InvalidArgument);
  CHECK_NOTHROW(elbo(model, obs, 5, 1));
  CHECK(draws_for(model, {BoundKind::Elbo, 5}) == 10);
  CHECK(draws_for(model, {BoundKind::Iwae, 30}) == 30);
}

TEST_CASE("stratified reduction") {
  const std::vector<double> w{0.0, 2.0, -1.0, -1.0};
  CHECK(reduce_log_weights(w, BoundKind::Iwae, 2) ==
        doctest::Approx(0.5 * (std::log((1.0 + std::exp(2.0)) / 2.0) - 1.0)).epsilon(1e-14));
  CHECK(reduce_log_weights(w, BoundKind::Elbo, 2) == doctest::Approx(0.0));
  CHECK(reduce_log_weights(w, BoundKind::Iwae, 1) == doctest::Approx(log_mean_exp(w)));
  CHECK_THROWS_AS(reduce_log_weights(w, BoundKind::Iwae, 3), ShapeError);
  CHECK_THROWS_AS(reduce_log_weights(std::vector<double>{}, BoundKind::Elbo), InvalidArgument);

  Tape t;
  Var lw = t.constant(DenseArray::matrix(1, 4, w));
  CHECK(reduce_log_weights(lw, BoundKind::Cubo, 2).value()[0] ==
        doctest::Approx(reduce_log_weights(w, BoundKind::Cubo, 2)).epsilon(1e-14));
}

TEST_CASE("estimator gradients pass finite differences with frozen noise") {
  for (JointKind kind : kAllKinds) {
    for (BoundKind bound : {BoundKind::Elbo, BoundKind::Iwae, BoundKind::Cubo}) {
      const MultimodalModel model = random_model(kind, 2);
      const auto obs = random_obs(3, 8);
      const GraphFunction f = [&](Tape& t, std::span<const Var> p) {
        ModelGraph g(model, t, p);
        std::vector<Var> x{t.constant(obs[0]), t.constant(obs[1])};
        return sum(joint_estimate(g, x, TupleSet::diagonal(2, 3), {bound, 4}, 6));
      };
      CAPTURE(to_string(kind));
      CAPTURE(to_string(bound));
      CHECK(finite_difference_check(f, model.parameters().values(), 1e-5) < 1e-5);
    }
  }
}

TEST_CASE("estimator spec parsing and validation") {
  CHECK(parse_bound_kind("iwae") == BoundKind::Iwae);
  CHECK(parse_bound_kind("cubo") == BoundKind::Cubo);
  CHECK(parse_bound_kind("elbo") == BoundKind::Elbo);
  CHECK_THROWS(parse_bound_kind("dreg"));
  CHECK_THROWS(EstimatorSpec{BoundKind::Iwae, 0}.validate());
}

TEST_CASE("doubly reparameterized reduction weights both paths") {
  Tape t;
  const std::vector<double> w{0.0, std::log(3.0), -1.0, 2.0};
  Var linear = t.variable(DenseArray::matrix(2, 2, w));
  Var squared = t.variable(DenseArray::matrix(2, 2, w));
  Var out = log_mean_exp_rows_dreg(linear, squared);
  CHECK(out.value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  t.backward(sum(out));
  const DenseArray gl = t.gradient(linear), gs = t.gradient(squared);
  CHECK(gl[0] == doctest::Approx(0.25));
  CHECK(gl[1] == doctest::Approx(0.75));
  CHECK(gs[0] == doctest::Approx(0.0625));
  CHECK(gs[1] == doctest::Approx(0.5625));
  CHECK_THROWS_AS(log_mean_exp_rows_dreg(linear, t.variable(DenseArray(Shape{4, 1}))), ShapeError);
  CHECK_THROWS_AS((EstimatorSpec{BoundKind::Cubo, 4, GradientKind::DoublyReparameterized}.validate()), InvalidArgument);
  CHECK(parse_gradient_kind("dreg") == GradientKind::DoublyReparameterized);
}

TEST_CASE("doubly reparameterized gradients keep the value and agree in expectation") {
  for (JointKind kind : {JointKind::ExplicitJoint, JointKind::ProductOfExperts}) {
    CAPTURE(to_string(kind));
    const MultimodalModel model = random_model(kind, 8);
    const auto obs = random_obs(2, 4);
    auto estimate = [&](GradientKind g, std::uint64_t seed, double& value) {
      Tape t;
      ModelGraph graph(model, t);
      std::vector<Var> x{t.constant(obs[0]), t.constant(obs[1])};
      Var est = sum(joint_estimate(graph, x, TupleSet::diagonal(2, 2), {BoundKind::Iwae, 5, g}, seed));
      value = est.item();
      t.backward(est);
      return graph.gradients();
    };
    const std::size_t runs = 400;
    const std::size_t n = model.parameters().scalar_count();
    std::vector<double> sum_d(n, 0.0), sum_d2(n, 0.0);
    for (std::uint64_t seed = 0; seed < runs; ++seed) {
      double v_plain = 0.0, v_dreg = 0.0;
      const ParameterStore plain = estimate(GradientKind::Reparameterized, seed, v_plain);
      const ParameterStore dreg = estimate(GradientKind::DoublyReparameterized, seed, v_dreg);
      REQUIRE(v_plain == v_dreg);
      std::size_t k = 0;
      for (std::size_t a = 0; a < plain.size(); ++a) {
        for (std::size_t i = 0; i < plain.values()[a].size(); ++i, ++k) {
          const double d = dreg.values()[a][i] - plain.values()[a][i];
          sum_d[k] += d;
          sum_d2[k] += d * d;
        }
      }
    }
    // Paired differences: the mean should vanish within sampling error.
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double mean = sum_d[k] / runs;
      const double var = std::max(sum_d2[k] / runs - mean * mean, 0.0);
      const double se = std::sqrt(var / (runs - 1));
      if (se > 1e-12) worst = std::max(worst, std::abs(mean) / se);
      else CHECK(std::abs(mean) < 1e-10);
    }
    CHECK(worst < 5.0);
  }
}
