#include <benchmark/benchmark.h>

#include "cmvae/experiments.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/random.hpp"

using namespace cmvae;

namespace {

RunConfig bench_config(JointKind kind, ObjectiveVariant variant) {
  RunConfig cfg;
  cfg.dataset.items = 400;
  cfg.dataset.pairs_per_instance = 5;
  cfg.model.joint_kind = kind;
  cfg.objective = ObjectiveConfig::for_variant(variant);
  return cfg;
}

void train_step_bench(benchmark::State& st, JointKind kind, ObjectiveVariant variant) {
  const RunConfig cfg = bench_config(kind, variant);
  const ExperimentData data = build_experiment_data(cfg);
  TrainState state = initial_state(cfg, data.generator.spec.model_modalities());
  for (auto _ : st) benchmark::DoNotOptimize(train_step(state, data.train, cfg).loss);
}

void BM_LogSumExp(benchmark::State& st) {
  const std::vector<double> v = standard_normals(1, static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(logsumexp(v));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_JointIwae(benchmark::State& st) {
  const RunConfig cfg = bench_config(JointKind::MixtureOfExperts, ObjectiveVariant::ContrastiveIwae);
  const ExperimentData data = build_experiment_data(cfg);
  const MultimodalModel model(data.generator.spec.model_modalities(), JointKind::MixtureOfExperts, {}, 1);
  std::vector<std::size_t> rows(64);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto obs = data.train.observations(rows);
  std::uint64_t seed = 0;
  for (auto _ : st) benchmark::DoNotOptimize(joint_estimate(model, obs, {BoundKind::Iwae, 30}, ++seed));
}

void BM_SandwichOracle(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(oracle_sandwich(200, 11).exact.mean);
}

}  // namespace

BENCHMARK(BM_LogSumExp)->Arg(30)->Arg(1024);
BENCHMARK(BM_JointIwae)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SandwichOracle)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(train_step_bench, moe_cI, JointKind::MixtureOfExperts, ObjectiveVariant::ContrastiveIwae)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(train_step_bench, moe_baseline, JointKind::MixtureOfExperts, ObjectiveVariant::Baseline)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(train_step_bench, poe_cI, JointKind::ProductOfExperts, ObjectiveVariant::ContrastiveIwae)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
