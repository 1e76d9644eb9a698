#include "cmvae/experiments.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "cmvae/error.hpp"
#include "cmvae/estimators.hpp"
#include "cmvae/random.hpp"

namespace cmvae {

namespace {

std::vector<double> differences(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::string stage_error(const char* stage, const std::exception& e) { return std::string(stage) + ": " + e.what(); }

// Reruns `body`, prefixing the message of any library error with the stage name.
template <typename F>
auto staged(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ConfigError& e) {
    throw ConfigError(stage_error(stage, e));
  } catch (const NumericalError& e) {
    throw NumericalError(stage_error(stage, e));
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(stage_error(stage, e));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(stage_error(stage, e));
  } catch (const Error& e) {
    throw Error(stage_error(stage, e));
  }
}

FactorSpec seeded_factors(const RunConfig& config) { return config.dataset.factors; }

}  // namespace

ExperimentData build_experiment_data(const RunConfig& config) {
  config.validate();
  FactorGenerator gen(seeded_factors(config));
  const std::uint64_t s = config.dataset.seed;
  std::vector<UnimodalPool> pools = generate_pools(gen, config.dataset.items, derive_seed(s, "train-pools"));
  const auto modalities = gen.spec.model_modalities();
  PairedDataset full = pair_related(modalities, pools, gen.spec.num_classes, config.dataset.pairs_per_instance,
                                    derive_seed(s, "train-pairing"));
  PairedDataset train = config.dataset.percent < 100.0 ? subset(full, config.dataset.percent, derive_seed(s, "subset"))
                                                       : std::move(full);
  EvaluationData eval = EvaluationData::build(gen, config.evaluation.test_items, derive_seed(s, "test"));
  return {std::move(gen), std::move(pools), std::move(train), std::move(eval)};
}

std::map<std::string, double> metrics_map(const Metrics& m) {
  std::map<std::string, double> out{{"latent_acc_m1", m.latent_acc_m1},
                                    {"latent_acc_m2", m.latent_acc_m2},
                                    {"joint_coh", m.joint_coh},
                                    {"cross_coh_12", m.cross_coh_12},
                                    {"cross_coh_21", m.cross_coh_21},
                                    {"mean_pmi_related", m.mean_pmi_related},
                                    {"mean_pmi_unrelated", m.mean_pmi_unrelated}};
  if (m.synergy_coh) out["synergy_coh"] = *m.synergy_coh;
  return out;
}

TrainingResult run_training(TrainState& state, const PairedDataset& train, const EvaluationData* evaluation,
                            const RunConfig& config, std::size_t steps, const RunOutput* output) {
  TrainingResult result;
  std::ofstream metrics_csv, log_csv;
  if (output != nullptr) {
    std::filesystem::create_directories(output->directory);
    std::ofstream(output->directory / "config.json", std::ios::trunc) << to_json(config);
    metrics_csv = open_csv(output->directory / "metrics.csv");
    write_metrics_header(metrics_csv);
    log_csv = open_csv(output->directory / "train_log.csv");
    log_csv << "# cmvae train log schema 1\nrun_id,step,loss,term1,term2\n";
  }
  auto checkpoint = [&](const std::string& name) {
    if (output != nullptr) save_checkpoint(output->directory / name, to_checkpoint(state));
  };
  auto run_eval = [&] {
    if (evaluation == nullptr) return;
    const Metrics m = evaluate(state.model, *evaluation, config.evaluation, derive_seed(config.seed, "evaluation"));
    result.evaluations.emplace_back(state.step, m);
    if (output != nullptr) {
      write_metrics_row(metrics_csv, config.run_id, state.step, m);
      metrics_csv.flush();
    }
  };

  if (steps == 0) checkpoint("checkpoint_" + std::to_string(state.step) + ".cmvae");
  const std::size_t end = state.step + steps;
  bool evaluated_last = false;
  while (state.step < end) {
    StepRecord record;
    try {
      record = train_step(state, train, config);
    } catch (const NumericalError& e) {
      std::string where = "no checkpoint written";
      if (output != nullptr) {
        checkpoint("last_good.cmvae");
        where = "last good state saved to " + (output->directory / "last_good.cmvae").string();
      }
      throw NumericalError(std::string(e.what()) + "; " + where);
    }
    result.log.push_back(record);
    if (output != nullptr) {
      log_csv << config.run_id << ',' << record.step << ',' << format_number(record.loss) << ','
              << format_number(record.term1) << ',' << format_number(record.term2) << '\n';
    }
    evaluated_last = false;
    if (config.eval_every > 0 && state.step % config.eval_every == 0) {
      run_eval();
      evaluated_last = true;
    }
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      checkpoint("checkpoint_" + std::to_string(state.step) + ".cmvae");
    }
  }
  if (steps > 0 && !evaluated_last) run_eval();
  checkpoint("final.cmvae");
  return result;
}

double mean_test_log_likelihood(const MultimodalModel& model, const EvaluationData& data, std::size_t samples,
                                std::uint64_t seed) {
  const std::vector<double> est =
      joint_estimate(model, data.related.all_observations(), {BoundKind::Iwae, samples}, seed);
  return std::accumulate(est.begin(), est.end(), 0.0) / static_cast<double>(est.size());
}

void write_sweep_header(std::ostream& out) {
  out << "# cmvae sweep schema 1\n";
  out << "run_id,variant,gamma,percent,seed,step,latent_acc_m1,latent_acc_m2,joint_coh,cross_coh_12,cross_coh_21,"
         "synergy_coh,mean_pmi_related,mean_pmi_unrelated,test_loglik\n";
}

void write_sweep_row(std::ostream& out, const SweepRow& r) {
  const Metrics& m = r.metrics;
  out << r.run_id << ',' << r.variant << ',' << format_number(r.gamma) << ',' << format_number(r.percent) << ','
      << r.seed << ',' << r.step << ',' << format_number(m.latent_acc_m1) << ',' << format_number(m.latent_acc_m2)
      << ',' << format_number(m.joint_coh) << ',' << format_number(m.cross_coh_12) << ','
      << format_number(m.cross_coh_21) << ',' << (m.synergy_coh ? format_number(*m.synergy_coh) : std::string())
      << ',' << format_number(m.mean_pmi_related) << ',' << format_number(m.mean_pmi_unrelated) << ','
      << format_number(r.test_log_likelihood) << '\n';
}

RunConfig replicate_config(const RunConfig& base, std::size_t replicate) {
  RunConfig c = base;
  c.seed = base.seed + replicate;
  c.dataset.seed = base.dataset.seed + replicate;
  return c;
}

namespace {

SweepRow train_and_summarize(const RunConfig& config) {
  ExperimentData data = build_experiment_data(config);
  TrainState state = initial_state(config, data.generator.spec.model_modalities());
  RunConfig quiet = config;
  quiet.eval_every = 0;
  run_training(state, data.train, nullptr, quiet, config.optimizer.steps, nullptr);
  SweepRow row;
  row.run_id = config.run_id;
  row.variant = to_string(config.objective.variant);
  row.gamma = config.objective.gamma;
  row.percent = config.dataset.percent;
  row.seed = config.seed;
  row.step = state.step;
  row.metrics = evaluate(state.model, data.evaluation, config.evaluation, derive_seed(config.seed, "evaluation"));
  row.test_log_likelihood =
      mean_test_log_likelihood(state.model, data.evaluation, config.evaluation.pmi_samples, derive_seed(config.seed, "test-loglik"));
  return row;
}

}  // namespace

std::vector<SweepRow> sweep_gamma(const RunConfig& base, std::span<const double> gammas, std::size_t replicates,
                                  std::ostream* csv) {
  if (gammas.empty()) throw ConfigError("no gamma values given");
  for (double g : gammas)
    if (std::isnan(g) || g < 1.0) throw ConfigError("gamma values must be at least 1");
  if (csv != nullptr) write_sweep_header(*csv);
  std::vector<SweepRow> rows;
  for (std::size_t r = 0; r < replicates; ++r) {
    for (double g : gammas) {
      RunConfig c = replicate_config(base, r);
      if (c.objective.variant == ObjectiveVariant::Baseline) {
        c.objective = ObjectiveConfig::for_variant(ObjectiveVariant::ContrastiveIwae, g, base.objective.num_negatives,
                                                   base.objective.term1.samples);
      }
      c.objective.gamma = g;
      c.run_id = base.run_id + "-gamma" + format_number(g) + "-r" + std::to_string(r);
      rows.push_back(train_and_summarize(c));
      if (csv != nullptr) {
        write_sweep_row(*csv, rows.back());
        csv->flush();
      }
    }
  }
  return rows;
}

std::vector<SweepRow> sweep_data(const RunConfig& base, std::span<const double> percents,
                                 std::span<const ObjectiveVariant> variants, std::size_t replicates,
                                 std::ostream* csv) {
  if (percents.empty() || variants.empty()) throw ConfigError("no percents or variants given");
  for (double p : percents)
    if (!(p > 0.0 && p <= 100.0)) throw ConfigError("percents must be in (0, 100]");
  if (csv != nullptr) write_sweep_header(*csv);
  std::vector<SweepRow> rows;
  const double gamma = base.objective.baseline() ? 2.0 : base.objective.gamma;
  for (std::size_t r = 0; r < replicates; ++r) {
    for (double p : percents) {
      for (ObjectiveVariant v : variants) {
        RunConfig c = replicate_config(base, r);
        c.dataset.percent = p;
        c.objective = ObjectiveConfig::for_variant(v, gamma, base.objective.num_negatives, base.objective.term1.samples);
        c.run_id = base.run_id + "-" + to_string(v) + "-p" + format_number(p) + "-r" + std::to_string(r);
        rows.push_back(train_and_summarize(c));
        if (csv != nullptr) {
          write_sweep_row(*csv, rows.back());
          csv->flush();
        }
      }
    }
  }
  return rows;
}

PipelineResult run_pipeline(const RunConfig& config, bool with_control) {
  config.validate();
  const PropagationConfig& prop = config.propagation;
  const std::uint64_t s = config.dataset.seed;
  RunConfig data_config = config;
  data_config.dataset.percent = 100.0;
  ExperimentData data = staged("data", [&] { return build_experiment_data(data_config); });
  const std::size_t C = data.generator.spec.num_classes;
  const auto modalities = data.generator.spec.model_modalities();

  std::vector<UnimodalPool> kept_pools, rest_pools;
  staged("split", [&] {
    for (std::size_t m = 0; m < data.pools.size(); ++m) {
      const auto kept = stratified_subset(data.pools[m].labels, C, prop.pretrain_percent,
                                          derive_seed(derive_seed(s, "pretrain-split"), static_cast<std::uint64_t>(m)));
      kept_pools.push_back(select(data.pools[m], kept));
      rest_pools.push_back(select(data.pools[m], complement(data.pools[m].size(), kept)));
    }
    return 0;
  });

  const PairedDataset related = staged("pairing", [&] {
    return pair_related(modalities, kept_pools, C, config.dataset.pairs_per_instance, derive_seed(s, "pretrain-pairing"));
  });
  auto mixed_rounds = [&](const std::vector<UnimodalPool>& pools, const char* label) {
    std::vector<PairedDataset> rounds;
    if (pools[0].size() == 0) return PairedDataset{C, modalities, pools, std::vector<std::vector<std::size_t>>(pools.size()), {}, 0, 0};
    for (std::size_t r = 0; r < prop.mixed_rounds; ++r) {
      rounds.push_back(pair_random(modalities, pools, C, derive_seed(derive_seed(s, label), static_cast<std::uint64_t>(r))));
    }
    return concatenate(rounds);
  };
  const PairedDataset scoring_set = staged("pairing", [&] { return mixed_rounds(kept_pools, "threshold-mixing"); });
  const PairedDataset mixed = staged("pairing", [&] { return mixed_rounds(rest_pools, "mixing"); });

  PipelineResult result;
  result.mixed_pairs = mixed.size();
  TrainState state = initial_state(config, modalities);
  RunConfig quiet = config;
  quiet.eval_every = 0;
  staged("pretrain", [&] { return run_training(state, related, nullptr, quiet, config.optimizer.steps, nullptr); });
  const std::uint64_t eval_seed = derive_seed(config.seed, "evaluation");
  result.before = staged("evaluate", [&] { return evaluate(state.model, data.evaluation, config.evaluation, eval_seed); });

  result.threshold = staged("threshold", [&] {
    const std::vector<double> scores = pmi(state.model, scoring_set, prop.pmi_samples, derive_seed(config.seed, "pmi"));
    return estimate_threshold(scores, scoring_set.related, prop.threshold_rule);
  });
  result.report = staged("propagate", [&] {
    return propagate(state.model, mixed, result.threshold.threshold, prop.pmi_samples, derive_seed(config.seed, "pmi"));
  });
  result.report.metrics_before = metrics_map(result.before);

  std::vector<std::size_t> flagged;
  for (std::size_t p = 0; p < result.report.predicted.size(); ++p)
    if (result.report.predicted[p]) flagged.push_back(p);
  result.propagated_pairs = flagged.size();

  if (!prop.continue_training) {
    result.after = result.before;
    result.report.metrics_after = metrics_map(result.after);
    return result;
  }

  TrainState control_state = state;
  PairedDataset augmented = related;
  if (!flagged.empty()) {
    PairedDataset predicted;
    predicted.num_classes = C;
    predicted.modalities = modalities;
    predicted.pools = mixed.pools;
    predicted.pairs.resize(modalities.size());
    for (std::size_t m = 0; m < modalities.size(); ++m)
      for (std::size_t p : flagged) predicted.pairs[m].push_back(mixed.pairs[m][p]);
    for (std::size_t p : flagged) predicted.related.push_back(mixed.related[p]);
    // Flags are predictions, so the combined set keeps ground truth only for scoring.
    const PairedDataset parts[] = {related, predicted};
    augmented = concatenate(parts);
  }
  staged("continue", [&] { return run_training(state, augmented, nullptr, quiet, prop.continue_steps, nullptr); });
  result.after = staged("evaluate", [&] { return evaluate(state.model, data.evaluation, config.evaluation, eval_seed); });
  result.report.metrics_after = metrics_map(result.after);
  if (with_control) {
    staged("control", [&] { return run_training(control_state, related, nullptr, quiet, prop.continue_steps, nullptr); });
    result.control = staged("evaluate", [&] { return evaluate(control_state.model, data.evaluation, config.evaluation, eval_seed); });
  }
  return result;
}

bool SandwichReport::sandwich_holds(double k) const {
  return iwae30_minus_elbo.mean > k * iwae30_minus_elbo.standard_error &&
         exact_minus_iwae30.mean > k * exact_minus_iwae30.standard_error &&
         cubo30_minus_exact.mean > k * cubo30_minus_exact.standard_error;
}

bool SandwichReport::iwae_monotone(double k) const {
  return iwae5_minus_iwae1.mean > -k * iwae5_minus_iwae1.standard_error &&
         iwae30_minus_iwae5.mean > -k * iwae30_minus_iwae5.standard_error;
}

LinearGaussianOracle sandwich_oracle() {
  const DenseArray ax = DenseArray::matrix(3, 2, {1.0, 0.0, 0.0, 1.5, 0.0, 0.0});
  const DenseArray ay = DenseArray::matrix(3, 2, {0.0, 0.0, 1.2, 0.0, 0.0, 0.8});
  return LinearGaussianOracle({ax, ay}, {0.5, 0.5});
}

SandwichReport oracle_sandwich(std::size_t items, std::uint64_t seed) {
  if (items < 2) throw InvalidArgument("the sandwich check needs at least two items");
  const LinearGaussianOracle oracle = sandwich_oracle();
  const std::vector<DenseArray> obs = oracle.sample(items, derive_seed(seed, "items"));
  const MultimodalModel perturbed = oracle.exact_model(kSandwichPerturbation);
  const MultimodalModel exact_model = oracle.exact_model();
  const std::uint64_t noise = derive_seed(seed, "noise");

  const std::vector<double> exact = oracle.log_joint(obs);
  const std::vector<double> elbo_v = elbo(perturbed, obs, 30, noise);
  const std::vector<double> iwae1 = iwae(perturbed, obs, 1, noise);
  const std::vector<double> iwae5 = iwae(perturbed, obs, 5, noise);
  const std::vector<double> iwae30 = iwae(perturbed, obs, 30, noise);
  const std::vector<double> cubo30 = cubo(perturbed, obs, 30, noise);

  SandwichReport r;
  r.items = items;
  r.elbo = mean_and_error(elbo_v);
  r.iwae1 = mean_and_error(iwae1);
  r.iwae5 = mean_and_error(iwae5);
  r.iwae30 = mean_and_error(iwae30);
  r.exact = mean_and_error(exact);
  r.cubo30 = mean_and_error(cubo30);
  r.iwae30_minus_elbo = mean_and_error(differences(iwae30, elbo_v));
  r.exact_minus_iwae30 = mean_and_error(differences(exact, iwae30));
  r.cubo30_minus_exact = mean_and_error(differences(cubo30, exact));
  r.iwae5_minus_iwae1 = mean_and_error(differences(iwae5, iwae1));
  r.iwae30_minus_iwae5 = mean_and_error(differences(iwae30, iwae5));

  const std::vector<double> tight_elbo = elbo(exact_model, obs, 30, noise);
  const std::vector<double> tight_cubo = cubo(exact_model, obs, 30, noise);
  for (std::size_t i = 0; i < items; ++i) {
    r.tight_elbo_error = std::max(r.tight_elbo_error, std::abs(tight_elbo[i] - exact[i]));
    r.tight_cubo_error = std::max(r.tight_cubo_error, std::abs(tight_cubo[i] - exact[i]));
  }
  return r;
}

}  // namespace cmvae
