// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by id (e.g. "AC-1 AC-5"); no arguments runs all of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmvae/error.hpp"
#include "cmvae/experiments.hpp"
#include "cmvae/objective.hpp"
#include "cmvae/random.hpp"
#include "cmvae/relatedness.hpp"

namespace fs = std::filesystem;
using namespace cmvae;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buffer[512];
  std::snprintf(buffer, sizeof(buffer), pattern, args...);
  return buffer;
}

RunConfig default_config() { return load_run_config(fs::path(CMVAE_SOURCE_DIR) / "configs" / "default.json"); }

double cross_coherence(const Metrics& m) { return 0.5 * (m.cross_coh_12 + m.cross_coh_21); }

// Process CPU time, which is what the runtime budgets count.
double cpu_minutes_since(std::clock_t start) {
  return static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC / 60.0;
}

// ---------------------------------------------------------------------------

constexpr std::size_t kOracleItems = 200;
constexpr std::uint64_t kOracleSeed = 11;

Outcome check_sandwich() {
  const SandwichReport r = oracle_sandwich(kOracleItems, kOracleSeed);
  const bool order = r.elbo.mean <= r.iwae30.mean && r.iwae30.mean <= r.exact.mean && r.exact.mean <= r.cubo30.mean;
  return {order && r.sandwich_holds(3.0),
          fmt("elbo %.4f iwae30 %.4f exact %.4f cubo30 %.4f; gaps/SE %.1f %.1f %.1f", r.elbo.mean, r.iwae30.mean,
              r.exact.mean, r.cubo30.mean, r.iwae30_minus_elbo.mean / r.iwae30_minus_elbo.standard_error,
              r.exact_minus_iwae30.mean / r.exact_minus_iwae30.standard_error,
              r.cubo30_minus_exact.mean / r.cubo30_minus_exact.standard_error)};
}

Outcome check_tightness() {
  const SandwichReport r = oracle_sandwich(kOracleItems, kOracleSeed);
  return {r.tight_elbo_error < 1e-9 && r.tight_cubo_error < 1e-9,
          fmt("max |elbo-exact| %.3g, max |cubo-exact| %.3g", r.tight_elbo_error, r.tight_cubo_error)};
}

Outcome check_monotonicity() {
  const SandwichReport r = oracle_sandwich(kOracleItems, kOracleSeed);
  return {r.iwae_monotone(3.0), fmt("iwae1 %.4f iwae5 %.4f iwae30 %.4f", r.iwae1.mean, r.iwae5.mean, r.iwae30.mean)};
}

Outcome check_gradients() {
  const FactorSpec spec = FactorSpec::defaults();
  const std::uint64_t seed = 21;
  const std::size_t batch = 8;
  std::vector<DenseArray> obs;
  {
    const FactorGenerator gen(spec);
    for (const auto& pool : generate_pools(gen, batch, seed)) obs.push_back(pool.obs);
  }
  const NegativeSet negatives = draw_negatives(batch, 2, 5, derive_seed(seed, "negatives"));
  double worst = 0.0;
  std::size_t count = 0;
  std::string detail;
  for (ObjectiveVariant variant : {ObjectiveVariant::ContrastiveIwae, ObjectiveVariant::ContrastiveCubo}) {
    for (JointKind kind : {JointKind::MixtureOfExperts, JointKind::ProductOfExperts, JointKind::ExplicitJoint}) {
      const MultimodalModel model(spec.model_modalities(), kind, {2, 1, 6}, seed);
      count = std::max(count, model.parameters().scalar_count());
      ObjectiveConfig cfg = ObjectiveConfig::for_variant(variant, 2.0, 5, 4);
      cfg.term1.gradient = GradientKind::Reparameterized;
      cfg.term2.gradient = GradientKind::Reparameterized;
      const GraphFunction f = [&](Tape& t, std::span<const Var> p) {
        ModelGraph g(model, t, p);
        std::vector<Var> x{t.constant(obs[0]), t.constant(obs[1])};
        return final_objective(g, x, negatives, cfg, derive_seed(seed, "noise")).loss;
      };
      worst = std::max(worst, finite_difference_check(f, model.parameters().values(), 1e-5));
    }
  }
  return {worst < 1e-5 && count <= 1000,
          fmt("max rel err %.3g over cI/cC x 3 families, up to %zu parameters", worst, count)};
}

Outcome check_identity() {
  const double e = -10.0, gamma = 2.0;
  const std::size_t N = 5, B = 4;
  const std::vector<double> pos(B, e);
  const std::vector<std::vector<std::vector<double>>> blocks(2, std::vector<std::vector<double>>(B, std::vector<double>(N, e)));
  const double value = assemble_final_loss(pos, blocks, gamma);

  // The same through the full objective: decoders that ignore z, a prior
  // encoder and observations chosen so every estimate equals e.
  std::vector<ModalitySpec> specs{{"a", 1, LikelihoodKind::Gaussian}, {"b", 1, LikelihoodKind::Gaussian}};
  MultimodalModel model(specs, JointKind::MixtureOfExperts, {2, 1, 4}, 1);
  model.zero_output_layers();
  const double a = std::sqrt(-e - std::log(2.0 * M_PI));
  Tape t;
  ModelGraph g(model, t);
  std::vector<Var> obs{t.constant(DenseArray(Shape{8, 1}, a)), t.constant(DenseArray(Shape{8, 1}, a))};
  const ObjectiveConfig cfg = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, gamma, N, 30);
  const double full = final_objective(g, obs, draw_negatives(8, 2, N, 3), cfg, 4).loss.item();

  const double expected = 11.609438;
  return {std::abs(value - expected) < 1e-6 && std::abs(full - value) < 1e-9 &&
              std::abs(value - ((1.0 - gamma) * e + std::log(static_cast<double>(N)))) < 1e-9,
          fmt("assembled %.9f, full objective %.9f", value, full)};
}

constexpr double kEncoderScale = 0.1;

Outcome check_pmi() {
  const FactorSpec spec = FactorSpec::defaults();
  const FactorGenerator gen(spec);
  const auto pools = generate_pools(gen, 200, 31);
  const std::vector<DenseArray> obs{pools[0].obs, pools[1].obs};

  // Decoders blind to z (zero first-layer weights) and encoders a short
  // random step away from the prior, so the importance weights still vary.
  MultimodalModel factorized(spec.model_modalities(), JointKind::MixtureOfExperts, {8, 2, 64}, 5);
  for (const auto& m : factorized.modalities()) {
    auto& w = factorized.parameters().at(MultimodalModel::layer_weight(MultimodalModel::decoder_prefix(m.name), 0));
    w = DenseArray(w.shape());
    const std::string enc = MultimodalModel::encoder_prefix(m.name);
    for (const std::string& name : {MultimodalModel::layer_weight(enc, 2), MultimodalModel::layer_bias(enc, 2)}) {
      for (double& v : factorized.parameters().at(name).data()) v *= kEncoderScale;
    }
  }
  const std::vector<double> mc = pmi(factorized, obs, 30, 7);
  double worst = 0.0;
  for (double v : mc) worst = std::max(worst, std::abs(v));
  const MeanAndError factorized_pmi = mean_and_error(mc);

  MultimodalModel constant(spec.model_modalities(), JointKind::MixtureOfExperts, {8, 2, 64}, 5);
  constant.zero_output_layers();
  bool exact_zero = true;
  for (double v : pmi(constant, obs, 30, 7)) exact_zero = exact_zero && v == 0.0;

  const LinearGaussianOracle oracle = LinearGaussianOracle::bivariate(0.8);
  const std::vector<DenseArray> origin{DenseArray(Shape{1, 1}), DenseArray(Shape{1, 1})};
  std::vector<double> estimates;
  const MultimodalModel exact = oracle.exact_model();
  for (std::uint64_t s = 0; s < 50; ++s) estimates.push_back(pmi(exact, origin, 30, s)[0]);
  const MeanAndError at_origin = mean_and_error(estimates);
  const double target = 0.510826;
  const bool bivariate = std::abs(at_origin.mean - target) <= 3.0 * at_origin.standard_error + 1e-6;

  return {std::abs(factorized_pmi.mean) < 0.05 && exact_zero && bivariate,
          fmt("factorized mean pmi %.4f +- %.4f max |pmi| %.4f, constant-weight zero %s, origin %.6f +- %.2g",
              factorized_pmi.mean, factorized_pmi.standard_error, worst,
              exact_zero ? "yes" : "no", at_origin.mean, at_origin.standard_error)};
}

// Step budgets of the training criteria.
constexpr std::size_t kDataEfficiencySteps = 800;
constexpr std::size_t kPretrainSteps = 1500;
constexpr std::size_t kContinueSteps = 500;
// Held-out items per propagation comparison; 500 leaves about one point of sampling noise.
constexpr std::size_t kPropagationTestItems = 3000;
constexpr std::size_t kCollapseSteps = 300;
constexpr std::size_t kSeeds = 5;

Outcome check_data_efficiency() {
  const std::clock_t start = std::clock();
  RunConfig base = default_config();
  base.run_id = "data-efficiency";
  base.optimizer.steps = kDataEfficiencySteps;
  base.eval_every = kDataEfficiencySteps;
  const std::vector<double> percents{20.0};
  const std::vector<ObjectiveVariant> variants{ObjectiveVariant::Baseline, ObjectiveVariant::ContrastiveIwae};
  const std::vector<SweepRow> rows = sweep_data(base, percents, variants, kSeeds, nullptr);
  std::size_t wins = 0;
  std::ostringstream detail;
  for (std::size_t r = 0; r < kSeeds; ++r) {
    double baseline = 0.0, contrastive = 0.0;
    for (const SweepRow& row : rows) {
      if (row.seed != replicate_config(base, r).seed || row.step != kDataEfficiencySteps) continue;
      (row.variant == "baseline" ? baseline : contrastive) = cross_coherence(row.metrics);
    }
    wins += contrastive >= baseline ? 1 : 0;
    detail << fmt("%s%.1f/%.1f", r == 0 ? "" : " ", contrastive, baseline);
  }
  const double minutes = cpu_minutes_since(start);
  return {wins >= 4 && minutes < 15.0,
          fmt("cI >= baseline in %zu/5 (cI/baseline: %s), %.1f CPU min", wins, detail.str().c_str(), minutes)};
}

Outcome check_propagation() {
  const std::clock_t start = std::clock();
  RunConfig base = default_config();
  base.run_id = "propagation";
  base.optimizer.steps = kPretrainSteps;
  base.propagation.continue_steps = kContinueSteps;
  base.evaluation.test_items = kPropagationTestItems;
  base.eval_every = kPretrainSteps + kContinueSteps;
  std::vector<double> f1;
  std::size_t wins = 0;
  std::ostringstream detail;
  for (std::size_t r = 0; r < kSeeds; ++r) {
    const PipelineResult p = run_pipeline(replicate_config(base, r), true);
    f1.push_back(p.report.defined ? p.report.f1 : 0.0);
    const double after = cross_coherence(p.after);
    const double control = cross_coherence(*p.control);
    wins += after > control ? 1 : 0;
    detail << fmt("%s%.2f:%.1f/%.1f", r == 0 ? "" : " ", f1.back(), after, control);
  }
  std::sort(f1.begin(), f1.end());
  const double median = f1[f1.size() / 2];
  const double minutes = cpu_minutes_since(start);
  return {median >= 0.8 && wins >= 4 && minutes < 15.0,
          fmt("median F1 %.3f, propagation beats control in %zu/5 (F1:after/control %s), %.1f CPU min", median, wins,
              detail.str().c_str(), minutes)};
}

Outcome check_collapse() {
  RunConfig base = default_config();
  base.dataset.percent = 100.0;
  const ExperimentData data = build_experiment_data(base);
  auto run = [&](double gamma) {
    RunConfig cfg = base;
    cfg.objective = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, gamma, 5, 30);
    TrainState state = initial_state(cfg, data.generator.spec.model_modalities());
    return run_training(state, data.train, nullptr, cfg, kCollapseSteps, nullptr).log;
  };
  const std::vector<StepRecord> one = run(1.0);
  const std::vector<StepRecord> two = run(2.0);

  double min_loss = std::numeric_limits<double>::infinity();
  for (const auto& s : one) min_loss = std::min(min_loss, s.loss);
  const double drop1 = one.front().term1 - one.back().term1;
  const double drop2 = one.front().term2 - one.back().term2;

  // "Keeps rising": the mean of term1 increases across consecutive thirds.
  const std::size_t third = two.size() / 3;
  std::vector<double> window(3, 0.0);
  for (std::size_t w = 0; w < 3; ++w) {
    for (std::size_t i = w * third; i < (w + 1) * third; ++i) window[w] += two[i].term1 / static_cast<double>(third);
  }
  const bool rising = window[0] < window[1] && window[1] < window[2];
  return {min_loss < 0.5 && drop1 >= 10.0 && drop2 >= 10.0 && rising,
          fmt("gamma=1: min loss %.3f, term1 fell %.1f, term2 fell %.1f; gamma=2 term1 thirds %.1f %.1f %.1f", min_loss,
              drop1, drop2, window[0], window[1], window[2])};
}

Outcome check_cost() {
  bool ok = true;
  std::ostringstream detail;
  const std::size_t B = 6, N = 5;
  for (std::size_t M : {2u, 3u, 4u}) {
    std::vector<ModalitySpec> specs;
    for (std::size_t m = 0; m < M; ++m) specs.push_back({"m" + std::to_string(m), 3, LikelihoodKind::Gaussian});
    const MultimodalModel model(specs, JointKind::MixtureOfExperts, {2, 1, 8}, M);
    Tape t;
    ModelGraph g(model, t);
    std::vector<Var> obs;
    for (std::size_t m = 0; m < M; ++m) obs.push_back(t.constant(DenseArray(Shape{B, 3}, standard_normals(m, B * 3))));
    std::vector<IndexMatrix> tuples;
    for (std::size_t i = 0; i < B; ++i) tuples.push_back(draw_index_matrix(B, M, N, i));
    EvaluationCounter counter;
    multimodal_objective(g, obs, tuples, ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, 2.0, N, 12), 1,
                         &counter);
    ok = ok && counter.tuples == B * (N + 1);
    detail << fmt("%sM=%zu: %.2f", M == 2 ? "" : ", ", M, static_cast<double>(counter.tuples) / B);
  }
  return {ok, "tuples per anchor with N=5: " + detail.str()};
}

// Determinism of every CLI command on a tiny configuration.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome check_determinism() {
  const fs::path root = fs::temp_directory_path() / "cmvae_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  RunConfig cfg = default_config();
  cfg.run_id = "det";
  cfg.dataset.items = 200;
  cfg.dataset.pairs_per_instance = 3;
  cfg.model.architecture = {4, 1, 16};
  cfg.optimizer.steps = 20;
  cfg.optimizer.batch_size = 16;
  cfg.objective = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, 2.0, 3, 6);
  cfg.evaluation.test_items = 60;
  cfg.evaluation.joint_samples = 60;
  cfg.evaluation.pmi_samples = 6;
  cfg.propagation.pretrain_percent = 50.0;
  cfg.propagation.continue_steps = 10;
  cfg.propagation.pmi_samples = 6;
  cfg.propagation.mixed_rounds = 2;
  cfg.eval_every = 10;
  cfg.checkpoint_every = 10;
  cfg.output_dir = (root / "out").string();
  const fs::path config = root / "config.json";
  std::ofstream(config) << to_json(cfg);

  const std::string cli = std::string("\"") + CMVAE_CLI + "\"";
  const std::string c = " --config \"" + config.string() + "\"";
  const fs::path run = root / "out" / "det";
  struct Command {
    std::string name, args;
    std::vector<fs::path> files;
  };
  const std::vector<Command> commands{
      {"train", "train" + c, {run / "metrics.csv", run / "train_log.csv", run / "final.cmvae"}},
      {"eval", "eval --checkpoint \"" + (run / "checkpoint_10.cmvae").string() + "\"" + c, {}},
      {"sweep-gamma", "sweep-gamma --gammas 1,2 --replicates 1" + c, {run / "sweep_gamma.csv"}},
      {"sweep-data", "sweep-data --percents 50 --variants baseline,cI --replicates 1" + c, {run / "sweep_data.csv"}},
      {"propagate", "propagate --control" + c, {run / "propagation.json", run / "propagation_metrics.csv"}},
  };
  bool ok = true;
  std::vector<std::string> failed;
  for (const Command& cmd : commands) {
    std::string outputs[2];
    for (int attempt = 0; attempt < 2; ++attempt) {
      const fs::path stdout_file = root / (cmd.name + std::to_string(attempt) + ".out");
      const int status = std::system((cli + " " + cmd.args + " > \"" + stdout_file.string() + "\"").c_str());
      if (status != 0) {
        outputs[attempt] = "exit " + std::to_string(status) + std::to_string(attempt);
        continue;
      }
      outputs[attempt] = slurp(stdout_file);
      for (const fs::path& f : cmd.files) outputs[attempt] += fs::exists(f) ? slurp(f) : "missing" + f.string();
    }
    if (outputs[0] != outputs[1] || outputs[0].empty()) {
      ok = false;
      failed.push_back(cmd.name);
    }
  }

  // Restore equivalence: 10 + 10 steps through a checkpoint file against 20.
  const ExperimentData data = build_experiment_data(cfg);
  const auto modalities = data.generator.spec.model_modalities();
  TrainState straight = initial_state(cfg, modalities);
  run_training(straight, data.train, nullptr, cfg, 20, nullptr);
  TrainState first = initial_state(cfg, modalities);
  run_training(first, data.train, nullptr, cfg, 10, nullptr);
  save_checkpoint(root / "half.cmvae", to_checkpoint(first));
  TrainState resumed = initial_state(cfg, modalities);
  restore(resumed, load_checkpoint(root / "half.cmvae"));
  run_training(resumed, data.train, nullptr, cfg, 10, nullptr);
  const bool restored = resumed.step == straight.step && resumed.model.parameters() == straight.model.parameters() &&
                        resumed.first_moment == straight.first_moment &&
                        resumed.second_moment == straight.second_moment;

  fs::remove_all(root);
  std::string detail = failed.empty() ? "5 CLI commands reproduce byte-identically" : "differing:";
  for (const auto& f : failed) detail += " " + f;
  detail += restored ? "; restore is bit-exact" : "; restore differs";
  return {ok && restored, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC-1", check_sandwich},   {"AC-2", check_tightness},       {"AC-3", check_monotonicity},
      {"AC-4", check_gradients},  {"AC-5", check_identity},        {"AC-6", check_pmi},
      {"AC-7", check_data_efficiency}, {"AC-8", check_propagation}, {"AC-9", check_collapse},
      {"AC-10", check_cost},      {"AC-11", check_determinism},
  };
  const std::set<std::string> selected(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [id, check] : criteria) {
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << id << ' ' << (outcome.pass ? "PASS" : "FAIL") << ' ' << outcome.detail
              << fmt(" [%.1fs]", seconds) << std::endl;
    failures += outcome.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
