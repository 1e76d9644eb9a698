#include "cmvae/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmvae/error.hpp"

namespace cmvae {

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("logsumexp of an empty vector");
  const double peak = *std::max_element(values.begin(), values.end());
  if (std::isinf(peak)) return peak;
  double total = 0.0;
  for (double v : values) total += std::exp(v - peak);
  return peak + std::log(total);
}

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("log_mean_exp of an empty vector");
  const double peak = *std::max_element(values.begin(), values.end());
  if (std::isinf(peak)) return peak;
  double total = 0.0;
  for (double v : values) total += std::exp(v - peak);
  return peak + std::log(total / static_cast<double>(values.size()));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

MeanAndError mean_and_error(std::span<const double> values) {
  MeanAndError out;
  if (values.empty()) return out;
  double total = 0.0;
  for (double v : values) total += v;
  out.mean = total / static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double squares = 0.0;
  for (double v : values) squares += (v - out.mean) * (v - out.mean);
  const double variance = squares / static_cast<double>(values.size() - 1);
  out.standard_error = std::sqrt(variance / static_cast<double>(values.size()));
  return out;
}

}  // namespace cmvae
