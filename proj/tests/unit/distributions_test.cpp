#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmvae/distributions.hpp"
#include "cmvae/error.hpp"

using namespace cmvae;

namespace {

DiagonalGaussian gaussian(Tape& t, std::vector<double> mean, std::vector<double> log_var) {
  return {t.constant(DenseArray::vector(std::move(mean))), t.constant(DenseArray::vector(std::move(log_var)))};
}

}  // namespace

TEST_CASE("gaussian log densities") {
  Tape t;
  CHECK(standard_normal_log_prob(t.constant(DenseArray::vector({0.0}))).item() ==
        doctest::Approx(-0.918938533204673).epsilon(1e-12));
  CHECK(gaussian_log_prob(gaussian(t, {0.0}, {0.0}), t.constant(DenseArray::vector({1.0}))).item() ==
        doctest::Approx(-1.418938533204673).epsilon(1e-12));
  CHECK(gaussian_log_prob(gaussian(t, {0.0}, {std::log(4.0)}), t.constant(DenseArray::vector({0.0}))).item() ==
        doctest::Approx(-1.612085713764618).epsilon(1e-12));
}

TEST_CASE("batched log density reduces per row") {
  Tape t;
  Var m = t.constant(DenseArray::matrix(2, 2, {0, 0, 1, 1}));
  Var v = t.constant(DenseArray::matrix(2, 2, {0, 0, 0, 0}));
  Var lp = gaussian_log_prob({m, v}, t.constant(DenseArray::matrix(2, 2, {0, 0, 1, 1})));
  REQUIRE(lp.shape() == Shape{2});
  CHECK(lp.value()[0] == doctest::Approx(-1.837877066409345));
  CHECK(lp.value()[1] == doctest::Approx(-1.837877066409345));
  CHECK_THROWS_AS(gaussian_log_prob({m, v}, t.constant(DenseArray::vector({0.0, 0.0, 0.0}))), ShapeError);
}

TEST_CASE("reparameterized draws and their derivatives") {
  Tape t;
  Var mu = t.variable(DenseArray::vector({5.0}));
  Var lv = t.variable(DenseArray::vector({2.0 * std::log(2.0)}));
  CHECK(rsample({mu, t.constant(DenseArray::vector({0.0}))}, t.constant(DenseArray::vector({0.0}))).item() == 5.0);
  Var z = rsample({t.constant(DenseArray::vector({0.0})), lv}, t.constant(DenseArray::vector({1.0})));
  CHECK(z.item() == doctest::Approx(2.0));
  Var z2 = rsample({mu, lv}, t.constant(DenseArray::vector({0.7})));
  t.backward(sum(z2));
  CHECK(t.gradient(mu)[0] == 1.0);
  CHECK(t.gradient(lv)[0] == doctest::Approx(0.5 * std::exp(0.5 * 2.0 * std::log(2.0)) * 0.7));
}

TEST_CASE("product of experts") {
  Tape t;
  SUBCASE("two unit experts with the prior") {
    std::vector<DiagonalGaussian> e{gaussian(t, {1.0}, {0.0}), gaussian(t, {3.0}, {0.0})};
    DiagonalGaussian p = gaussian_product(e, true);
    CHECK(p.mean.item() == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
    CHECK(std::exp(p.log_var.item()) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("single component without prior is the identity") {
    std::vector<DiagonalGaussian> e{gaussian(t, {0.3, -2.0}, {0.4, -1.0})};
    DiagonalGaussian p = gaussian_product(e, false);
    CHECK(p.mean.value()[0] == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(p.mean.value()[1] == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(p.log_var.value()[0] == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(p.log_var.value()[1] == doctest::Approx(-1.0).epsilon(1e-14));
  }
  SUBCASE("a very broad expert leaves the prior") {
    std::vector<DiagonalGaussian> e{gaussian(t, {3.0}, {std::log(1e8)})};
    DiagonalGaussian p = gaussian_product(e, true);
    CHECK(std::abs(p.mean.item()) < 1e-6);
    CHECK(std::abs(p.log_var.item()) < 1e-6);
  }
  SUBCASE("no components") { CHECK_THROWS_AS(gaussian_product({}, true), InvalidArgument); }
}

TEST_CASE("observation likelihoods") {
  Tape t;
  ObservationLikelihood b = ObservationLikelihood::bernoulli(t.constant(DenseArray::matrix(1, 2, {0.0, 100.0})));
  CHECK(b.location.value()[1] == kLogitClamp);
  Var lp = b.log_prob(t.constant(DenseArray::matrix(1, 2, {1.0, 0.0})));
  CHECK(std::isfinite(lp.value()[0]));
  CHECK(lp.value()[0] == doctest::Approx(std::log(0.5) - (kLogitClamp + std::log1p(std::exp(-kLogitClamp)))));

  ObservationLikelihood g = ObservationLikelihood::gaussian(t.constant(DenseArray::matrix(1, 1, {0.0})),
                                                            t.constant(DenseArray::vector({-50.0})));
  CHECK(g.log_var.value()[0] == kLogVarFloor);
  ObservationLikelihood unit = ObservationLikelihood::gaussian(t.constant(DenseArray::matrix(1, 1, {0.0})),
                                                               t.constant(DenseArray::vector({0.0})));
  CHECK(unit.log_prob(t.constant(DenseArray::matrix(1, 1, {1.0}))).value()[0] ==
        doctest::Approx(-1.418938533204673));
}
