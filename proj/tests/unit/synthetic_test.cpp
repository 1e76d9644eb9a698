#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "cmvae/error.hpp"
#include "cmvae/synthetic.hpp"

using namespace cmvae;

namespace {

double binomial_sd(double p, std::size_t n) { return std::sqrt(p * (1.0 - p) / static_cast<double>(n)); }

}  // namespace

TEST_CASE("noiseless class-only factors give one observation per class") {
  FactorSpec spec = FactorSpec::defaults(3);
  spec.noise_scale = 0.0;
  for (auto& m : spec.modalities) m.private_dim = 0;
  const FactorGenerator gen(spec);
  for (std::size_t m = 0; m < 2; ++m) {
    const UnimodalPool pool = generate_unimodal(gen, 100, m, 4);
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < pool.size(); ++i)
      distinct.insert(std::vector<double>(pool.obs.row(i).begin(), pool.obs.row(i).end()));
    CHECK(distinct.size() == spec.num_classes);
  }
}

TEST_CASE("generation is seeded") {
  const FactorGenerator a(FactorSpec::defaults(1)), b(FactorSpec::defaults(1)), c(FactorSpec::defaults(2));
  CHECK(a.maps == b.maps);
  CHECK(a.maps != c.maps);
  const auto p1 = generate_pools(a, 50, 9), p2 = generate_pools(b, 50, 9);
  CHECK(p1[0].obs == p2[0].obs);
  CHECK(p1[1].labels == p2[1].labels);
  for (int n : a.attempts) CHECK((n >= 1 && n <= kMaxMapAttempts));
  for (const DenseArray& map : a.maps) CHECK(shared_block_full_rank(map, 5));
  CHECK_FALSE(shared_block_full_rank(DenseArray(Shape{6, 7}), 5));
}

TEST_CASE("classes are balanced and observations in range") {
  const FactorGenerator gen(FactorSpec::defaults());
  const UnimodalPool pool = generate_unimodal(gen, 103, 0, 2);
  std::vector<std::size_t> counts(5);
  for (std::size_t l : pool.labels) ++counts[l];
  CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  for (double v : pool.obs.values()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("the generator's linear discriminant is near Bayes optimal") {
  const FactorGenerator gen(FactorSpec::defaults());
  const auto pools = generate_pools(gen, 2000, 5);
  for (std::size_t m = 0; m < 2; ++m) {
    const OracleClassifier oracle(gen, m);
    CHECK(oracle.accuracy(pools[m].obs, pools[m].labels) >= 0.99);
  }
}

TEST_CASE("related pairing") {
  const FactorGenerator gen(FactorSpec::defaults());
  const auto pools = generate_pools(gen, 200, 1);
  const PairedDataset ds = pair_related(gen.spec.model_modalities(), pools, 5, 30, 2);
  CHECK(ds.size() == 30 * 200);
  CHECK(ds.related_count() == ds.size());
  for (std::size_t p = 0; p < ds.size(); ++p) CHECK(ds.label(0, p) == ds.label(1, p));
  CHECK_NOTHROW(ds.validate());
  const PairedDataset again = pair_related(gen.spec.model_modalities(), pools, 5, 30, 2);
  CHECK(again.pairs == ds.pairs);
}

TEST_CASE("one item per class pairs as a perfect matching") {
  FactorSpec spec = FactorSpec::defaults();
  spec.num_classes = 8;
  const FactorGenerator gen(spec);
  const auto pools = generate_pools(gen, 8, 3);
  const PairedDataset ds = pair_related(spec.model_modalities(), pools, 8, 1, 4);
  REQUIRE(ds.size() == 8);
  std::set<std::size_t> partners(ds.pairs[1].begin(), ds.pairs[1].end());
  CHECK(partners.size() == 8);
}

TEST_CASE("random pairing is related at the base rate") {
  for (std::size_t C : {2u, 10u}) {
    FactorSpec spec = FactorSpec::defaults();
    spec.num_classes = C;
    const FactorGenerator gen(spec);
    const auto pools = generate_pools(gen, 4000, 6);
    const PairedDataset ds = pair_random(spec.model_modalities(), pools, C, 7);
    const double p = 1.0 / static_cast<double>(C);
    const double rate = static_cast<double>(ds.related_count()) / static_cast<double>(ds.size());
    CHECK(std::abs(rate - p) < 4.0 * binomial_sd(p, ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.related[i] == (ds.label(0, i) == ds.label(1, i)));
  }
}

TEST_CASE("subsets") {
  const FactorGenerator gen(FactorSpec::defaults());
  const auto pools = generate_pools(gen, 500, 1);
  const PairedDataset ds = pair_related(gen.spec.model_modalities(), pools, 5, 3, 2);
  const PairedDataset full = subset(ds, 100.0, 9);
  CHECK(full.pairs == ds.pairs);

  const auto kept = stratified_subset(pools[0].labels, 5, 20.0, 4);
  CHECK(std::is_sorted(kept.begin(), kept.end()));
  std::vector<std::size_t> counts(5);
  for (std::size_t i : kept) ++counts[pools[0].labels[i]];
  for (std::size_t c : counts) CHECK((c >= 19 && c <= 21));
  const auto rest = complement(500, kept);
  CHECK(rest.size() + kept.size() == 500);

  const PairedDataset small = subset(ds, 10.0, 9);
  CHECK(small.pools[0].size() == 50);
  CHECK(small.related_count() == small.size());
  CHECK_THROWS_AS(stratified_subset(pools[0].labels, 5, 0.1, 4), InvalidArgument);
}

TEST_CASE("concatenation keeps pairs and flags") {
  const FactorGenerator gen(FactorSpec::defaults());
  const auto pools = generate_pools(gen, 40, 1);
  const PairedDataset a = pair_related(gen.spec.model_modalities(), pools, 5, 2, 2);
  const PairedDataset b = pair_random(gen.spec.model_modalities(), pools, 5, 3);
  const PairedDataset parts[] = {a, b};
  const PairedDataset c = concatenate(parts);
  CHECK(c.size() == a.size() + b.size());
  CHECK(c.related_count() == a.related_count() + b.related_count());
  const auto obs_c = c.all_observations();
  const auto obs_b = b.all_observations();
  CHECK(obs_c[1].row(a.size() + 3)[0] == obs_b[1].row(3)[0]);
}

TEST_CASE("dataset files round trip") {
  const FactorGenerator gen(FactorSpec::defaults());
  const auto pools = generate_pools(gen, 30, 1);
  const PairedDataset ds = pair_random(gen.spec.model_modalities(), pools, 5, 3);
  std::stringstream buf;
  write_dataset(buf, ds);
  const PairedDataset back = read_dataset(buf);
  CHECK(back.pairs == ds.pairs);
  CHECK(back.related == ds.related);
  CHECK(back.pools[1].obs == ds.pools[1].obs);
  CHECK(back.modalities[1].name == "m2");

  std::string bytes;
  {
    std::stringstream again;
    write_dataset(again, ds);
    bytes = again.str();
  }
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_dataset(truncated), FormatError);
  bytes[0] = 'X';
  std::stringstream corrupt(bytes);
  CHECK_THROWS_AS(read_dataset(corrupt), FormatError);

  std::stringstream csv;
  write_dataset_csv(csv, ds);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "pair,index_m1,index_m2,related,label_m1,label_m2");
}

TEST_CASE("factor spec validation") {
  FactorSpec spec = FactorSpec::defaults();
  spec.modalities[0].obs_dim = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
