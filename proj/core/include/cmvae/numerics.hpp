#pragma once

#include <cstddef>
#include <span>

namespace cmvae {

/// max(v) + log(sum(exp(v - max(v)))), summed left to right.
/// Returns -inf when every entry is -inf. Throws InvalidArgument on empty input.
double logsumexp(std::span<const double> values);

/// max(v) + log(mean(exp(v - max(v)))). Equal entries return that value exactly.
double log_mean_exp(std::span<const double> values);

double stable_sigmoid(double x);
/// log(1 + exp(x)) without overflow.
double stable_softplus(double x);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Sample mean and standard error of the mean (n - 1 denominator).
struct MeanAndError {
  double mean = 0.0;
  double standard_error = 0.0;
};
MeanAndError mean_and_error(std::span<const double> values);

}  // namespace cmvae
