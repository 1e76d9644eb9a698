#include "cmvae/checkpoint.hpp"

#include <array>
#include <fstream>
#include <unordered_map>

#include "binary_io.hpp"
#include "cmvae/error.hpp"

namespace cmvae {

using detail::get_le;
using detail::put_le;

namespace {

constexpr std::array<char, 5> kMagic{'C', 'M', 'V', 'A', 'E'};
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void write_checkpoint(std::ostream& out, const NamedArrays& arrays) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, value] : arrays) {
    detail::put_string(out, name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t extent : value.shape()) put_le<std::uint64_t>(out, extent);
  }
  for (const auto& entry : arrays)
    for (double v : entry.second.data()) detail::put_f64(out, v);
  if (!out) throw FormatError("failed writing checkpoint");
}

NamedArrays read_checkpoint(std::istream& in) {
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<std::pair<std::string, Shape>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(in);
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > kMaxRank) throw FormatError("checkpoint array rank too large");
    Shape shape(rank);
    for (auto& extent : shape) extent = get_le<std::uint64_t>(in);
    table.emplace_back(std::move(name), std::move(shape));
  }
  NamedArrays out;
  for (auto& [name, shape] : table) {
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = detail::get_f64(in);
    out.emplace_back(std::move(name), DenseArray(std::move(shape), std::move(data)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedArrays& arrays) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, arrays);
}

NamedArrays load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

NamedArrays to_named_arrays(const ParameterStore& store, const std::string& prefix) {
  NamedArrays out;
  for (std::size_t i = 0; i < store.size(); ++i) out.emplace_back(prefix + store.names()[i], store.values()[i]);
  return out;
}

void assign_from(ParameterStore& store, const NamedArrays& arrays, const std::string& prefix) {
  std::unordered_map<std::string, const DenseArray*> lookup;
  for (const auto& [name, value] : arrays) lookup.emplace(name, &value);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string key = prefix + store.names()[i];
    auto it = lookup.find(key);
    if (it == lookup.end()) throw FormatError("checkpoint has no entry '" + key + "'");
    if (it->second->shape() != store.values()[i].shape()) {
      throw FormatError("checkpoint entry '" + key + "' has shape " + shape_string(it->second->shape()) +
                        ", expected " + shape_string(store.values()[i].shape()));
    }
    store.values()[i] = *it->second;
  }
}

}  // namespace cmvae
