#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "cmvae/error.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/random.hpp"

using namespace cmvae;

TEST_CASE("logsumexp matches direct summation") {
  const std::vector<double> a{1.0, 2.0, 3.0};
  CHECK(logsumexp(a) == doctest::Approx(3.40760596444438).epsilon(1e-12));
  const std::vector<double> zeros{0.0, 0.0, 0.0};
  CHECK(logsumexp(zeros) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("logsumexp does not overflow") {
  const std::vector<double> big{1000.0, 1000.0};
  const double v = logsumexp(big);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> none{-inf, -inf};
  CHECK(logsumexp(none) == -inf);
  CHECK_THROWS_AS(logsumexp(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("log_mean_exp returns a repeated value exactly") {
  for (double e : {-10.0, -1.2345678, 0.0, 37.5}) {
    const std::vector<double> same(30, e);
    CHECK(log_mean_exp(same) == e);
  }
}

TEST_CASE("log_mean_exp is bounded by mean and max") {
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(7);
    double mean = 0.0, peak = -1e300;
    for (double& x : v) {
      x = n(rng);
      mean += x / 7.0;
      peak = std::max(peak, x);
    }
    const double l = log_mean_exp(v);
    CHECK(l >= mean - 1e-12);
    CHECK(l <= peak + 1e-12);
  }
}

TEST_CASE("softplus and sigmoid are stable at extremes") {
  CHECK(stable_softplus(800.0) == doctest::Approx(800.0));
  CHECK(stable_softplus(-800.0) >= 0.0);
  CHECK(stable_softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(stable_sigmoid(-800.0) >= 0.0);
  CHECK(stable_sigmoid(800.0) == 1.0);
  CHECK(stable_sigmoid(0.0) == 0.5);
}

TEST_CASE("mean_and_error") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const MeanAndError m = mean_and_error(v);
  CHECK(m.mean == doctest::Approx(2.5));
  CHECK(m.standard_error == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
}

TEST_CASE("seed derivation is deterministic and label sensitive") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, std::uint64_t{3}) != derive_seed(1, std::uint64_t{4}));
  CHECK(standard_normals(9, 5) == standard_normals(9, 5));
  const auto longer = standard_normals(9, 8);
  const auto shorter = standard_normals(9, 5);
  CHECK(std::equal(shorter.begin(), shorter.end(), longer.begin()));
}

TEST_CASE("sample_without_replacement excludes and never repeats") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = sample_without_replacement(rng, 10, 5, 4);
    CHECK(s.size() == 5);
    std::sort(s.begin(), s.end());
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(std::find(s.begin(), s.end(), 4) == s.end());
    CHECK(s.back() < 10);
  }
}
