#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cmvae/error.hpp"
#include "cmvae/objective.hpp"
#include "cmvae/random.hpp"

using namespace cmvae;

namespace {

// q = prior and decoders that ignore z: every tuple of identical unit
// observations has the same estimate, -ln(2 pi) - M a^2 / 2 for value a.
MultimodalModel constant_model(std::size_t modalities, JointKind kind) {
  std::vector<ModalitySpec> specs;
  for (std::size_t m = 0; m < modalities; ++m) specs.push_back({"m" + std::to_string(m), 1, LikelihoodKind::Gaussian});
  MultimodalModel model(specs, kind, {2, 1, 4}, 1);
  model.zero_output_layers();
  return model;
}

std::vector<Var> constant_batch(Tape& t, std::size_t modalities, std::size_t B, double value) {
  std::vector<Var> obs;
  for (std::size_t m = 0; m < modalities; ++m) obs.push_back(t.constant(DenseArray(Shape{B, 1}, value)));
  return obs;
}

}  // namespace

TEST_CASE("negatives exclude the anchor") {
  const NegativeSet n = draw_negatives(6, 2, 5, 3);
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<std::size_t> got = n.index[m][i];
      std::sort(got.begin(), got.end());
      std::vector<std::size_t> expected;
      for (std::size_t j = 0; j < 6; ++j)
        if (j != i) expected.push_back(j);
      CHECK(got == expected);
    }
  }
  CHECK(draw_negatives(10, 2, 5, 3).index == draw_negatives(10, 2, 5, 3).index);
  CHECK(draw_negatives(10, 2, 5, 3).index != draw_negatives(10, 2, 5, 4).index);
  CHECK_THROWS_AS(draw_negatives(5, 2, 5, 3), InvalidArgument);
}

TEST_CASE("negatives share the anchor's class at the base rate") {
  const std::size_t B = 500, C = 5, N = 5;
  const NegativeSet n = draw_negatives(B, 2, N, 17);
  std::size_t same = 0, total = 0;
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j : n.index[m][i]) {
        same += (j % C == i % C);
        ++total;
      }
  const double p = (static_cast<double>(B) / C - 1.0) / (B - 1.0);
  const double rate = static_cast<double>(same) / static_cast<double>(total);
  CHECK(std::abs(rate - p) < 4.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(total)));
}

TEST_CASE("final loss on fixed numbers") {
  SUBCASE("equal estimates leave ln N") {
    const std::vector<double> pos{-3.0, -3.0};
    const std::vector<std::vector<std::vector<double>>> blocks{{{-3.0, -3.0, -3.0}, {-3.0, -3.0, -3.0}}};
    CHECK(assemble_final_loss(pos, blocks, 1.0) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  }
  SUBCASE("one negative") {
    const std::vector<double> pos{2.5};
    const std::vector<std::vector<std::vector<double>>> blocks{{{-1.0}}};
    CHECK(assemble_final_loss(pos, blocks, 1.0) == doctest::Approx(-3.5).epsilon(1e-14));
  }
  SUBCASE("decreasing in the gap") {
    double previous = std::numeric_limits<double>::infinity();
    for (double gap : {0.0, 1.0, 5.0, 20.0}) {
      const std::vector<double> pos{gap};
      const std::vector<std::vector<std::vector<double>>> blocks{{{0.0, 0.0, 0.0, 0.0, 0.0}}};
      const double v = assemble_final_loss(pos, blocks, 1.0);
      CHECK(v < previous);
      CHECK(v == doctest::Approx(-gap + std::log(5.0)));
      previous = v;
    }
  }
  SUBCASE("graph and value forms agree") {
    Tape t;
    const std::vector<double> pos{-1.0, 0.5};
    const std::vector<std::vector<std::vector<double>>> blocks{{{0.1, -2.0}, {0.3, 0.4}}, {{1.0, 2.0}, {-1.0, -3.0}}};
    std::vector<Var> vb{t.constant(DenseArray::matrix(2, 2, {0.1, -2.0, 0.3, 0.4})),
                        t.constant(DenseArray::matrix(2, 2, {1.0, 2.0, -1.0, -3.0}))};
    const double g = assemble_final_loss(t.constant(DenseArray::vector(pos)), vb, 2.0).item();
    CHECK(g == doctest::Approx(assemble_final_loss(pos, blocks, 2.0)).epsilon(1e-14));
  }
}

TEST_CASE("equal estimates give (1 - gamma) e + ln N") {
  const double value = std::sqrt(10.0 - std::log(2.0 * M_PI));  // makes e = -10 for two modalities
  for (JointKind kind : {JointKind::ExplicitJoint, JointKind::ProductOfExperts, JointKind::MixtureOfExperts}) {
    if (kind == JointKind::ProductOfExperts) continue;  // its posterior is not the prior
    const MultimodalModel model = constant_model(2, kind);
    Tape t;
    ModelGraph g(model, t);
    const auto obs = constant_batch(t, 2, 8, value);
    const ObjectiveConfig cfg = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, 2.0, 5, 30);
    const ObjectiveTerms terms = final_objective(g, obs, draw_negatives(8, 2, 5, 1), cfg, 4);
    CHECK(std::abs(terms.loss.item() - 11.609437912434100) < 1e-9);
    CHECK(terms.term1 == doctest::Approx(-10.0).epsilon(1e-12));
  }
  for (std::size_t M : {2u, 3u, 4u}) {
    const MultimodalModel model = constant_model(M, JointKind::MixtureOfExperts);
    Tape t;
    ModelGraph g(model, t);
    const auto obs = constant_batch(t, M, 8, 0.0);
    const double e = -0.5 * static_cast<double>(M) * std::log(2.0 * M_PI);
    const ObjectiveConfig cfg = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveCubo, 2.0, 5, 12);
    const IndexMatrix J = draw_index_matrix(8, M, 5, 2);
    const ObjectiveTerms terms = multimodal_objective(g, obs, std::span<const IndexMatrix>(&J, 1), cfg, 4);
    CHECK(std::abs(terms.loss.item() - ((1.0 - 2.0) * e + std::log(5.0))) < 1e-9);
  }
}

TEST_CASE("baseline mode is the negative mean elbo") {
  const MultimodalModel model = constant_model(2, JointKind::MixtureOfExperts);
  Tape t;
  ModelGraph g(model, t);
  const auto obs = constant_batch(t, 2, 6, 0.0);
  const ObjectiveConfig cfg = ObjectiveConfig::for_variant(ObjectiveVariant::Baseline);
  CHECK(std::isinf(cfg.gamma));
  const ObjectiveTerms terms = final_objective(g, obs, NegativeSet{}, cfg, 1);
  CHECK(terms.loss.item() == doctest::Approx(std::log(2.0 * M_PI)).epsilon(1e-14));
  CHECK(std::isnan(terms.term2));
}

TEST_CASE("joint estimates per anchor stay at N + 1 for any modality count") {
  for (std::size_t M : {2u, 3u, 4u}) {
    for (std::size_t N : {1u, 5u, 7u}) {
      const MultimodalModel model = constant_model(M, JointKind::MixtureOfExperts);
      Tape t;
      ModelGraph g(model, t);
      const std::size_t B = 9;
      const auto obs = constant_batch(t, M, B, 0.3);
      const ObjectiveConfig cfg = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, 2.0, N, 12);
      std::vector<IndexMatrix> per_anchor;
      for (std::size_t i = 0; i < B; ++i) per_anchor.push_back(draw_index_matrix(B, M, N, i));
      EvaluationCounter counter;
      multimodal_objective(g, obs, per_anchor, cfg, 3, &counter);
      CHECK(counter.tuples == B * (N + 1));
    }
  }
}

TEST_CASE("objective input validation") {
  const MultimodalModel model = constant_model(2, JointKind::MixtureOfExperts);
  Tape t;
  ModelGraph g(model, t);
  const auto obs = constant_batch(t, 2, 6, 0.0);
  ObjectiveConfig cfg = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, 2.0, 5, 4);
  CHECK_THROWS_AS(final_objective(g, obs, draw_negatives(6, 2, 4, 1), cfg, 1), InvalidArgument);
  IndexMatrix bad = draw_index_matrix(6, 2, 5, 1);
  bad.index[1][2] = 6;
  CHECK_THROWS_AS(multimodal_objective(g, obs, std::span<const IndexMatrix>(&bad, 1), cfg, 1), InvalidArgument);
  IndexMatrix narrow = draw_index_matrix(6, 2, 4, 1);
  CHECK_THROWS_AS(multimodal_objective(g, obs, std::span<const IndexMatrix>(&narrow, 1), cfg, 1), ShapeError);
  cfg.gamma = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_objective_variant("cC") == ObjectiveVariant::ContrastiveCubo);
  CHECK_THROWS_AS(parse_objective_variant("cX"), ConfigError);
}
