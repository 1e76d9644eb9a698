#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cmvae/error.hpp"
#include "cmvae/estimators.hpp"
#include "cmvae/experiments.hpp"
#include "cmvae/linear_gaussian.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

cmvae::RunConfig read_config(const std::string& path) {
  cmvae::RunConfig config = path.empty() ? cmvae::RunConfig{} : cmvae::load_run_config(path);
  cmvae::apply_seed_override(config, std::getenv("CMVAE_SEED"));
  config.validate();
  return config;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& text, Parse parse, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw cmvae::ConfigError(std::string("empty entry in ") + what);
    out.push_back(parse(item));
  }
  if (out.empty()) throw cmvae::ConfigError(std::string("no values given for ") + what);
  return out;
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw cmvae::ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw cmvae::ConfigError("not a number: '" + s + "'");
  return v;
}

fs::path run_directory(const cmvae::RunConfig& c) { return fs::path(c.output_dir) / c.run_id; }

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw cmvae::FormatError("cannot write '" + path.string() + "'");
  return out;
}

int cmd_train(const std::string& config_path) {
  const cmvae::RunConfig config = read_config(config_path);
  cmvae::ExperimentData data = cmvae::build_experiment_data(config);
  cmvae::TrainState state = cmvae::initial_state(config, data.generator.spec.model_modalities());
  const cmvae::RunOutput output{run_directory(config)};
  const auto result = cmvae::run_training(state, data.train, &data.evaluation, config, config.optimizer.steps, &output);
  std::cout << "trained " << state.step << " steps";
  if (!result.log.empty()) std::cout << ", final loss " << cmvae::format_number(result.log.back().loss);
  std::cout << "\nwrote " << output.directory.string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path) {
  const cmvae::RunConfig config = read_config(config_path);
  cmvae::ExperimentData data = cmvae::build_experiment_data(config);
  cmvae::TrainState state = cmvae::initial_state(config, data.generator.spec.model_modalities());
  cmvae::restore(state, cmvae::load_checkpoint(checkpoint));
  const cmvae::Metrics m =
      cmvae::evaluate(state.model, data.evaluation, config.evaluation, cmvae::derive_seed(config.seed, "evaluation"));
  cmvae::write_metrics_header(std::cout);
  cmvae::write_metrics_row(std::cout, config.run_id, state.step, m);
  return 0;
}

int cmd_sweep_gamma(const std::string& config_path, const std::string& gammas_text, std::size_t replicates) {
  const cmvae::RunConfig config = read_config(config_path);
  const auto gammas = parse_list<double>(gammas_text, parse_double, "--gammas");
  std::ofstream csv = open_output(run_directory(config) / "sweep_gamma.csv");
  cmvae::sweep_gamma(config, gammas, replicates, &csv);
  std::cout << "wrote " << (run_directory(config) / "sweep_gamma.csv").string() << '\n';
  return 0;
}

int cmd_sweep_data(const std::string& config_path, const std::string& percents_text,
                   const std::string& variants_text, std::size_t replicates) {
  const cmvae::RunConfig config = read_config(config_path);
  const auto percents = parse_list<double>(percents_text, parse_double, "--percents");
  const auto variants = parse_list<cmvae::ObjectiveVariant>(
      variants_text, [](const std::string& s) { return cmvae::parse_objective_variant(s); },
      "--variants");
  std::ofstream csv = open_output(run_directory(config) / "sweep_data.csv");
  cmvae::sweep_data(config, percents, variants, replicates, &csv);
  std::cout << "wrote " << (run_directory(config) / "sweep_data.csv").string() << '\n';
  return 0;
}

int cmd_propagate(const std::string& config_path, std::optional<double> percent, const std::string& variant,
                  bool control) {
  cmvae::RunConfig config = read_config(config_path);
  if (percent) config.propagation.pretrain_percent = *percent;
  if (!variant.empty()) {
    const auto v = cmvae::parse_objective_variant(variant);
    const double gamma = config.objective.baseline() ? 2.0 : config.objective.gamma;
    config.objective =
        cmvae::ObjectiveConfig::for_variant(v, gamma, config.objective.num_negatives, config.objective.term1.samples);
  }
  config.validate();
  const cmvae::PipelineResult result = cmvae::run_pipeline(config, control);
  const fs::path dir = run_directory(config);
  open_output(dir / "propagation.json") << cmvae::to_json(result.report) << '\n';
  std::ofstream csv = open_output(dir / "propagation_metrics.csv");
  cmvae::write_metrics_header(csv);
  cmvae::write_metrics_row(csv, config.run_id + "-before", 0, result.before);
  cmvae::write_metrics_row(csv, config.run_id + "-after", config.propagation.continue_steps, result.after);
  if (result.control) cmvae::write_metrics_row(csv, config.run_id + "-control", config.propagation.continue_steps, *result.control);
  std::cout << cmvae::to_json(result.report) << '\n';
  return 0;
}

int cmd_oracle_check(std::size_t items, std::uint64_t seed) {
  const cmvae::SandwichReport r = cmvae::oracle_sandwich(items, seed);
  auto show = [](const char* label, const cmvae::MeanAndError& v) {
    std::printf("%-22s %12.6f  (se %.6f)\n", label, v.mean, v.standard_error);
  };
  show("elbo", r.elbo);
  show("iwae K=1", r.iwae1);
  show("iwae K=5", r.iwae5);
  show("iwae K=30", r.iwae30);
  show("exact log p", r.exact);
  show("cubo K=30", r.cubo30);
  show("iwae30 - elbo", r.iwae30_minus_elbo);
  show("exact - iwae30", r.exact_minus_iwae30);
  show("cubo30 - exact", r.cubo30_minus_exact);
  std::printf("exact encoder: max |elbo - exact| %.3g, max |cubo - exact| %.3g\n", r.tight_elbo_error,
              r.tight_cubo_error);

  const auto oracle = cmvae::LinearGaussianOracle::bivariate(0.8);
  const std::vector<cmvae::DenseArray> origin{cmvae::DenseArray::matrix(1, 1, {0.0}),
                                              cmvae::DenseArray::matrix(1, 1, {0.0})};
  std::printf("bivariate pmi at origin %.6f\n", oracle.pmi(origin).front());

  const bool ok = r.sandwich_holds() && r.iwae_monotone() && r.tight_elbo_error < 1e-9 && r.tight_cubo_error < 1e-9;
  std::printf("%s\n", ok ? "oracle check passed" : "oracle check FAILED");
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive multimodal VAE trainer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint;
  std::string gammas = "1,1.1,2,8,64";
  std::string percents = "10,20,50,100";
  std::string variants = "baseline,cI,cC";
  std::string variant;
  double pretrain_percent = 10.0;
  std::size_t replicates = 1;
  bool control = false;
  std::size_t oracle_items = 200;
  std::uint64_t oracle_seed = 11;

  auto* train = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", config_path, "Run configuration (JSON)")->required();

  auto* sweep_gamma = app.add_subcommand("sweep-gamma", "Train and evaluate once per gamma");
  sweep_gamma->add_option("--config", config_path, "Run configuration (JSON)");
  sweep_gamma->add_option("--gammas", gammas, "Comma-separated gamma values")->capture_default_str();
  sweep_gamma->add_option("--replicates", replicates, "Paired seeds per setting")->capture_default_str();

  auto* sweep_data = app.add_subcommand("sweep-data", "Train and evaluate per data percent and variant");
  sweep_data->add_option("--config", config_path, "Run configuration (JSON)");
  sweep_data->add_option("--percents", percents, "Comma-separated percents")->capture_default_str();
  sweep_data->add_option("--variants", variants, "Comma-separated variants")->capture_default_str();
  sweep_data->add_option("--replicates", replicates, "Paired seeds per setting")->capture_default_str();

  auto* propagate = app.add_subcommand("propagate", "Pretrain, propagate relatedness and continue training");
  propagate->add_option("--config", config_path, "Run configuration (JSON)");
  auto* pretrain_option =
      propagate->add_option("--pretrain-percent", pretrain_percent, "Percent of each pool kept as related (default: config)");
  propagate->add_option("--variant", variant, "Objective variant (baseline, cI, cC)");
  propagate->add_flag("--control", control, "Also continue training without propagated pairs");

  auto* oracle = app.add_subcommand("oracle-check", "Compare estimators against the analytic oracle");
  oracle->add_option("--items", oracle_items, "Oracle items")->capture_default_str();
  oracle->add_option("--seed", oracle_seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(config_path);
    if (*eval) return cmd_eval(checkpoint, config_path);
    if (*sweep_gamma) return cmd_sweep_gamma(config_path, gammas, replicates);
    if (*sweep_data) return cmd_sweep_data(config_path, percents, variants, replicates);
    if (*propagate) {
      return cmd_propagate(config_path, pretrain_option->count() > 0 ? std::optional<double>(pretrain_percent) : std::nullopt,
                           variant, control);
    }
    if (*oracle) return cmd_oracle_check(oracle_items, oracle_seed);
  } catch (const cmvae::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const cmvae::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
