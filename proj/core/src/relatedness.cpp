#include "cmvae/relatedness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <json.hpp>
#include <numeric>

#include "cmvae/error.hpp"
#include "cmvae/estimators.hpp"

namespace cmvae {

namespace {

constexpr std::size_t kPmiChunk = 256;

}  // namespace

std::vector<double> pmi(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                        std::uint64_t seed) {
  if (model.num_modalities() != 2 || obs.size() != 2) {
    throw UnsupportedError("pointwise mutual information is defined here for two modalities");
  }
  std::vector<double> out = joint_estimate(model, obs, {BoundKind::Iwae, samples}, seed);
  const std::vector<double> px = unimodal_marginal(model, 0, obs[0], samples, seed);
  const std::vector<double> py = unimodal_marginal(model, 1, obs[1], samples, seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] - (px[i] + py[i]);
  return out;
}

std::vector<double> pmi(const MultimodalModel& model, const PairedDataset& ds, std::size_t samples,
                        std::uint64_t seed) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (std::size_t begin = 0; begin < ds.size(); begin += kPmiChunk) {
    const std::size_t end = std::min(ds.size(), begin + kPmiChunk);
    std::vector<std::size_t> rows(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const std::vector<double> chunk = pmi(model, ds.observations(rows), samples, seed);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

std::string to_string(ThresholdRule rule) { return rule == ThresholdRule::MaxF1 ? "max-f1" : "max-accuracy"; }

ThresholdRule parse_threshold_rule(std::string_view text) {
  if (text == "max-f1") return ThresholdRule::MaxF1;
  if (text == "max-accuracy") return ThresholdRule::MaxAccuracy;
  throw ConfigError("unknown threshold rule '" + std::string(text) + "'");
}

ClassificationScores score_predictions(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("prediction and truth lengths differ");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i]) ++fp;
    else if (truth[i]) ++fn;
    else ++tn;
  }
  ClassificationScores s;
  s.n_predicted = tp + fp;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  s.accuracy = truth.empty() ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(truth.size());
  return s;
}

std::vector<std::uint8_t> apply_threshold(std::span<const double> scores, double threshold) {
  std::vector<std::uint8_t> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > threshold ? 1 : 0;
  return out;
}

ThresholdEstimate estimate_threshold(std::span<const double> scores, std::span<const std::uint8_t> truth,
                                     ThresholdRule rule) {
  if (scores.size() != truth.size()) throw ShapeError("score and truth lengths differ");
  for (double s : scores)
    if (std::isnan(s)) throw NumericalError("threshold estimation on NaN scores");
  const std::size_t positives = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), std::uint8_t{1}));
  if (positives == 0 || positives == truth.size()) {
    throw InvalidArgument("threshold estimation needs both related and unrelated examples");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  if (scores[order.front()] == scores[order.back()]) {
    throw InvalidArgument("all scores are equal; no threshold separates them");
  }
  const std::size_t n = scores.size();
  // Sweep cuts from the top: items above the cut are predicted related.
  std::size_t tp = 0, fp = 0;
  ThresholdEstimate best;
  bool found = false;
  double best_stat = -1.0;
  for (std::size_t k = n - 1; k > 0; --k) {
    if (truth[order[k]]) ++tp;
    else ++fp;
    const double hi = scores[order[k]], lo = scores[order[k - 1]];
    if (hi == lo) continue;
    const std::size_t tn = (n - positives) - fp;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    const double accuracy = static_cast<double>(tp + tn) / static_cast<double>(n);
    const double stat = rule == ThresholdRule::MaxF1 ? f1 : accuracy;
    // Cuts are visited from the largest threshold down, so only a strict
    // improvement moves the choice.
    if (!found || stat > best_stat) {
      found = true;
      best_stat = stat;
      best.threshold = lo + (hi - lo) / 2.0;
      best.scores = {precision, recall, f1, accuracy, tp + fp};
    }
  }
  return best;
}

PropagationReport propagate(const MultimodalModel& model, const PairedDataset& mixed, double threshold,
                            std::size_t samples, std::uint64_t seed) {
  if (std::isnan(threshold)) throw InvalidArgument("threshold is NaN");
  PropagationReport report;
  report.threshold = threshold;
  if (mixed.size() == 0) {
    report.defined = false;
    return report;
  }
  const std::vector<double> scores = pmi(model, mixed, samples, seed);
  report.predicted = apply_threshold(scores, threshold);
  const ClassificationScores s = score_predictions(report.predicted, mixed.related);
  report.precision = s.precision;
  report.recall = s.recall;
  report.f1 = s.f1;
  report.n_predicted = s.n_predicted;
  return report;
}

std::string to_json(const PropagationReport& report) {
  auto number = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  nlohmann::ordered_json j;
  j["threshold"] = number(report.threshold);
  j["precision"] = report.defined ? number(report.precision) : nullptr;
  j["recall"] = report.defined ? number(report.recall) : nullptr;
  j["f1"] = report.defined ? number(report.f1) : nullptr;
  j["n_predicted"] = report.n_predicted;
  j["defined"] = report.defined;
  j["metrics_before"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.metrics_before) j["metrics_before"][k] = number(v);
  j["metrics_after"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.metrics_after) j["metrics_after"][k] = number(v);
  return j.dump(2) + "\n";
}

}  // namespace cmvae
