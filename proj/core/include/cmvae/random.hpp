#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cmvae {

using Rng = std::mt19937_64;

/// Mixes a label or counter into a seed. Distinct labels give statistically
/// independent streams; the mapping is fixed across runs and platforms.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// FNV-1a over the bit patterns of `values`.
std::uint64_t content_hash(std::span<const double> values);
std::uint64_t content_hash(std::string_view text);

std::vector<double> standard_normals(std::uint64_t seed, std::size_t count);

/// `count` distinct indices from [0, population) excluding `excluded`,
/// uniformly without replacement.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t population, std::size_t count,
                                                    std::size_t excluded);

}  // namespace cmvae
