#include "cmvae/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "cmvae/error.hpp"

namespace cmvae {

namespace {

using Json = nlohmann::ordered_json;

// Reads the keys of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
          throw ConfigError("");
        }
        out = static_cast<T>(v.get<std::uint64_t>());
      } else if constexpr (std::is_floating_point_v<T>) {
        if (v.is_string() && v.get<std::string>() == "inf") {
          out = std::numeric_limits<T>::infinity();
        } else {
          if (!v.is_number()) throw ConfigError("");
          out = v.get<T>();
        }
      } else {
        if (!v.is_string()) throw ConfigError("");
        out = v.get<std::string>();
      }
    } catch (const ConfigError&) {
      throw ConfigError(where() + "." + key + " has the wrong type");
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) throw ConfigError("unknown key " + where() + "." + item.key());
    }
  }

  std::string where() const { return path_; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json number(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

void read_estimator(Section s, EstimatorSpec& spec) {
  std::string kind = to_string(spec.kind);
  s.read("kind", kind);
  spec.kind = parse_bound_kind(kind);
  s.read("samples", spec.samples);
  if (spec.kind != BoundKind::Iwae) spec.gradient = GradientKind::Reparameterized;
  std::string gradient = to_string(spec.gradient);
  s.read("gradient", gradient);
  spec.gradient = parse_gradient_kind(gradient);
  s.finish();
}

Json write_estimator(const EstimatorSpec& spec) {
  Json j;
  j["kind"] = to_string(spec.kind);
  j["samples"] = spec.samples;
  j["gradient"] = to_string(spec.gradient);
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (run_id.empty()) throw ConfigError("run_id must not be empty");
  for (char c : run_id) {
    if (c == ',' || c == '\n' || c == '"' || c == '/') throw ConfigError("run_id contains a reserved character");
  }
  dataset.factors.validate();
  if (dataset.items < dataset.factors.num_classes) throw ConfigError("dataset.items must be at least the class count");
  if (dataset.pairs_per_instance == 0) throw ConfigError("dataset.pairs_per_instance must be positive");
  if (!(dataset.percent > 0.0 && dataset.percent <= 100.0)) throw ConfigError("dataset.percent must be in (0, 100]");
  if (model.architecture.latent_dim == 0) throw ConfigError("model.latent_dim must be positive");
  if (model.architecture.hidden_layers > 0 && model.architecture.hidden_width == 0) {
    throw ConfigError("model.hidden_width must be positive");
  }
  objective.validate();
  if (model.joint_kind == JointKind::MixtureOfExperts) {
    const std::size_t M = dataset.factors.modalities.size();
    for (const EstimatorSpec* e : {&objective.term1, &objective.term2}) {
      if (e->kind != BoundKind::Elbo && e->samples % M != 0) {
        throw ConfigError("mixture posterior needs estimator samples divisible by the modality count");
      }
    }
  }
  if (!(optimizer.learning_rate > 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.epsilon > 0.0)) {
    throw ConfigError("optimizer settings out of range");
  }
  if (!objective.baseline() && optimizer.batch_size <= objective.num_negatives) {
    throw ConfigError("optimizer.batch_size must exceed objective.num_negatives");
  }
  if (optimizer.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
  if (evaluation.test_items < dataset.factors.num_classes || evaluation.joint_samples == 0 || evaluation.pmi_samples == 0) {
    throw ConfigError("evaluation sizes out of range");
  }
  if (!(evaluation.train_fraction > 0.0 && evaluation.train_fraction < 1.0)) {
    throw ConfigError("evaluation.train_fraction must be in (0, 1)");
  }
  if (!(propagation.pretrain_percent > 0.0 && propagation.pretrain_percent <= 100.0)) {
    throw ConfigError("propagation.pretrain_percent must be in (0, 100]");
  }
  if (propagation.pmi_samples == 0 || propagation.mixed_rounds == 0) throw ConfigError("propagation sizes must be positive");
}

RunConfig run_config_from_json(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section s(root, "config");
  s.read("run_id", c.run_id);
  s.read("seed", c.seed);
  s.read("eval_every", c.eval_every);
  s.read("checkpoint_every", c.checkpoint_every);
  s.read("output_dir", c.output_dir);

  if (s.has("dataset")) {
    Section d = s.child("dataset");
    d.read("items", c.dataset.items);
    d.read("pairs_per_instance", c.dataset.pairs_per_instance);
    d.read("percent", c.dataset.percent);
    d.read("seed", c.dataset.seed);
    if (d.has("factors")) {
      Section f = d.child("factors");
      FactorSpec& fs = c.dataset.factors;
      f.read("num_classes", fs.num_classes);
      f.read("noise_scale", fs.noise_scale);
      f.read("shared_scale", fs.shared_scale);
      f.read("private_scale", fs.private_scale);
      f.read("seed", fs.seed);
      if (f.has("modalities")) {
        const Json& list = f.raw("modalities");
        if (!list.is_array()) throw ConfigError("config.dataset.factors.modalities must be an array");
        fs.modalities.clear();
        for (std::size_t i = 0; i < list.size(); ++i) {
          Section m(list[i], "config.dataset.factors.modalities[" + std::to_string(i) + "]");
          ModalityFactorSpec spec;
          std::string likelihood = "bernoulli";
          m.read("name", spec.name);
          m.read("obs_dim", spec.obs_dim);
          m.read("private_dim", spec.private_dim);
          m.read("likelihood", likelihood);
          m.finish();
          if (spec.name.empty()) throw ConfigError(m.where() + ".name must be set");
          spec.likelihood = parse_likelihood_kind(likelihood);
          fs.modalities.push_back(spec);
        }
      }
      f.finish();
    }
    d.finish();
  }

  if (s.has("model")) {
    Section m = s.child("model");
    std::string kind = to_string(c.model.joint_kind);
    m.read("joint_kind", kind);
    c.model.joint_kind = parse_joint_kind(kind);
    m.read("latent_dim", c.model.architecture.latent_dim);
    m.read("hidden_layers", c.model.architecture.hidden_layers);
    m.read("hidden_width", c.model.architecture.hidden_width);
    m.finish();
  }

  if (s.has("objective")) {
    Section o = s.child("objective");
    std::string variant = to_string(c.objective.variant);
    o.read("variant", variant);
    const ObjectiveVariant v = parse_objective_variant(variant);
    std::size_t samples = c.objective.term1.samples;
    o.read("samples", samples);
    c.objective = ObjectiveConfig::for_variant(v, 2.0, c.objective.num_negatives, samples);
    o.read("gamma", c.objective.gamma);
    o.read("num_negatives", c.objective.num_negatives);
    if (o.has("term1")) read_estimator(o.child("term1"), c.objective.term1);
    if (o.has("term2")) read_estimator(o.child("term2"), c.objective.term2);
    o.finish();
  }

  if (s.has("optimizer")) {
    Section o = s.child("optimizer");
    o.read("learning_rate", c.optimizer.learning_rate);
    o.read("beta1", c.optimizer.beta1);
    o.read("beta2", c.optimizer.beta2);
    o.read("epsilon", c.optimizer.epsilon);
    o.read("steps", c.optimizer.steps);
    o.read("batch_size", c.optimizer.batch_size);
    o.finish();
  }

  if (s.has("evaluation")) {
    Section e = s.child("evaluation");
    e.read("test_items", c.evaluation.test_items);
    e.read("joint_samples", c.evaluation.joint_samples);
    e.read("pmi_samples", c.evaluation.pmi_samples);
    e.read("ridge", c.evaluation.ridge);
    e.read("train_fraction", c.evaluation.train_fraction);
    e.read("split_seed", c.evaluation.split_seed);
    e.finish();
  }

  if (s.has("propagation")) {
    Section p = s.child("propagation");
    std::string rule = to_string(c.propagation.threshold_rule);
    p.read("pretrain_percent", c.propagation.pretrain_percent);
    p.read("pmi_samples", c.propagation.pmi_samples);
    p.read("threshold_rule", rule);
    c.propagation.threshold_rule = parse_threshold_rule(rule);
    p.read("continue_training", c.propagation.continue_training);
    p.read("continue_steps", c.propagation.continue_steps);
    p.read("mixed_rounds", c.propagation.mixed_rounds);
    p.finish();
  }
  s.finish();
  c.validate();
  return c;
}

std::string to_json(const RunConfig& c) {
  Json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.seed;

  Json factors;
  factors["num_classes"] = c.dataset.factors.num_classes;
  factors["noise_scale"] = c.dataset.factors.noise_scale;
  factors["shared_scale"] = c.dataset.factors.shared_scale;
  factors["private_scale"] = c.dataset.factors.private_scale;
  factors["seed"] = c.dataset.factors.seed;
  factors["modalities"] = Json::array();
  for (const ModalityFactorSpec& m : c.dataset.factors.modalities) {
    Json mj;
    mj["name"] = m.name;
    mj["obs_dim"] = m.obs_dim;
    mj["private_dim"] = m.private_dim;
    mj["likelihood"] = to_string(m.likelihood);
    factors["modalities"].push_back(mj);
  }
  j["dataset"]["items"] = c.dataset.items;
  j["dataset"]["pairs_per_instance"] = c.dataset.pairs_per_instance;
  j["dataset"]["percent"] = c.dataset.percent;
  j["dataset"]["seed"] = c.dataset.seed;
  j["dataset"]["factors"] = factors;

  j["model"]["joint_kind"] = to_string(c.model.joint_kind);
  j["model"]["latent_dim"] = c.model.architecture.latent_dim;
  j["model"]["hidden_layers"] = c.model.architecture.hidden_layers;
  j["model"]["hidden_width"] = c.model.architecture.hidden_width;

  j["objective"]["variant"] = to_string(c.objective.variant);
  j["objective"]["gamma"] = number(c.objective.gamma);
  j["objective"]["num_negatives"] = c.objective.num_negatives;
  j["objective"]["term1"] = write_estimator(c.objective.term1);
  j["objective"]["term2"] = write_estimator(c.objective.term2);

  j["optimizer"]["learning_rate"] = c.optimizer.learning_rate;
  j["optimizer"]["beta1"] = c.optimizer.beta1;
  j["optimizer"]["beta2"] = c.optimizer.beta2;
  j["optimizer"]["epsilon"] = c.optimizer.epsilon;
  j["optimizer"]["steps"] = c.optimizer.steps;
  j["optimizer"]["batch_size"] = c.optimizer.batch_size;

  j["evaluation"]["test_items"] = c.evaluation.test_items;
  j["evaluation"]["joint_samples"] = c.evaluation.joint_samples;
  j["evaluation"]["pmi_samples"] = c.evaluation.pmi_samples;
  j["evaluation"]["ridge"] = c.evaluation.ridge;
  j["evaluation"]["train_fraction"] = c.evaluation.train_fraction;
  j["evaluation"]["split_seed"] = c.evaluation.split_seed;

  j["propagation"]["pretrain_percent"] = c.propagation.pretrain_percent;
  j["propagation"]["pmi_samples"] = c.propagation.pmi_samples;
  j["propagation"]["threshold_rule"] = to_string(c.propagation.threshold_rule);
  j["propagation"]["continue_training"] = c.propagation.continue_training;
  j["propagation"]["continue_steps"] = c.propagation.continue_steps;
  j["propagation"]["mixed_rounds"] = c.propagation.mixed_rounds;

  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return run_config_from_json(text.str());
}

void apply_seed_override(RunConfig& config, const char* value) {
  if (value == nullptr) return;
  const std::string_view text(value);
  std::uint64_t seed = 0;
  const auto result = std::from_chars(text.data(), text.data() + text.size(), seed);
  if (text.empty() || result.ec != std::errc() || result.ptr != text.data() + text.size()) {
    throw ConfigError("CMVAE_SEED must be a non-negative integer, got '" + std::string(text) + "'");
  }
  config.seed = seed;
}

}  // namespace cmvae
