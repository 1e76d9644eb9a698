#include "cmvae/random.hpp"

#include <bit>
#include <cstring>
#include <numeric>

#include "cmvae/error.hpp"

namespace cmvae {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return splitmix(seed ^ splitmix(content_hash(label)));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix(seed ^ splitmix(index + 0x632BE59BD9B4E019ULL));
}

std::uint64_t content_hash(std::span<const double> values) {
  std::uint64_t h = kFnvOffset;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFU;
      h *= kFnvPrime;
    }
  }
  return h;
}

std::uint64_t content_hash(std::string_view text) {
  std::uint64_t h = kFnvOffset;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  return h;
}

std::vector<double> standard_normals(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(count);
  for (double& v : out) v = normal(rng);
  return out;
}

std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t population, std::size_t count,
                                                    std::size_t excluded) {
  std::vector<std::size_t> pool;
  pool.reserve(population);
  for (std::size_t i = 0; i < population; ++i)
    if (i != excluded) pool.push_back(i);
  if (count > pool.size()) throw InvalidArgument("not enough items to sample without replacement");
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace cmvae
