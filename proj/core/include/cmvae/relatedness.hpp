#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cmvae/model.hpp"
#include "cmvae/synthetic.hpp"

namespace cmvae {

/// Monte Carlo PMI per item: IWAE joint estimate minus the IWAE estimates of
/// both unimodal marginals, all with `samples` draws and the same seed.
std::vector<double> pmi(const MultimodalModel& model, std::span<const DenseArray> obs, std::size_t samples,
                        std::uint64_t seed);
/// PMI of every pair of a dataset, evaluated in chunks.
std::vector<double> pmi(const MultimodalModel& model, const PairedDataset& ds, std::size_t samples,
                        std::uint64_t seed);

enum class ThresholdRule { MaxF1, MaxAccuracy };
std::string to_string(ThresholdRule rule);
ThresholdRule parse_threshold_rule(std::string_view text);

struct ClassificationScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::size_t n_predicted = 0;
};

/// Precision is 0 when nothing is predicted, recall 0 when nothing is true,
/// F1 0 when both are 0.
ClassificationScores score_predictions(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
/// Flags scores strictly above the threshold.
std::vector<std::uint8_t> apply_threshold(std::span<const double> scores, double threshold);

struct ThresholdEstimate {
  double threshold = 0.0;
  ClassificationScores scores;
};

/// Best midpoint between adjacent distinct scores under the rule; ties go to
/// the larger threshold. Throws InvalidArgument when only one class is
/// present or all scores are equal.
ThresholdEstimate estimate_threshold(std::span<const double> scores, std::span<const std::uint8_t> truth,
                                     ThresholdRule rule);

struct PropagationReport {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_predicted = 0;
  /// False when there was nothing to score (an empty mixed set).
  bool defined = true;
  std::vector<std::uint8_t> predicted;
  std::map<std::string, double> metrics_before;
  std::map<std::string, double> metrics_after;
};

/// Flags pairs of `mixed` whose PMI exceeds the threshold and scores the
/// flags against the dataset's ground truth.
PropagationReport propagate(const MultimodalModel& model, const PairedDataset& mixed, double threshold,
                            std::size_t samples, std::uint64_t seed);

std::string to_json(const PropagationReport& report);

}  // namespace cmvae
