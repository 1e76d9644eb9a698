#include <array>
#include <fstream>
#include <ostream>

#include "binary_io.hpp"
#include "cmvae/error.hpp"
#include "cmvae/synthetic.hpp"

namespace cmvae {

using detail::get_le;
using detail::put_le;

namespace {

constexpr std::array<char, 4> kMagic{'C', 'M', 'D', 'S'};
constexpr std::uint64_t kMaxItems = std::uint64_t{1} << 32;
constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 20;

}  // namespace

void write_dataset(std::ostream& out, const PairedDataset& ds) {
  ds.validate();
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kDatasetVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_modalities()));
  for (std::size_t m = 0; m < ds.num_modalities(); ++m) {
    detail::put_string(out, ds.modalities[m].name);
    put_le<std::uint32_t>(out, ds.modalities[m].likelihood == LikelihoodKind::Bernoulli ? 0U : 1U);
    put_le<std::uint64_t>(out, ds.pools[m].size());
    put_le<std::uint64_t>(out, ds.modalities[m].obs_dim);
  }
  for (const UnimodalPool& pool : ds.pools) {
    for (double v : pool.obs.data()) detail::put_f64(out, v);
    for (std::size_t c : pool.labels) put_le<std::uint64_t>(out, c);
  }
  put_le<std::uint64_t>(out, ds.size());
  put_le<std::uint64_t>(out, ds.pairs_per_instance);
  put_le<std::uint64_t>(out, ds.pairing_seed);
  for (const auto& column : ds.pairs)
    for (std::size_t i : column) put_le<std::uint64_t>(out, i);
  for (std::uint8_t r : ds.related) put_le<std::uint8_t>(out, r);
  if (!out) throw FormatError("failed writing dataset");
}

PairedDataset read_dataset(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a dataset file (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  PairedDataset ds;
  ds.num_classes = get_le<std::uint32_t>(in);
  const auto M = get_le<std::uint32_t>(in);
  if (M < 2 || M > 64) throw FormatError("implausible modality count");
  std::vector<std::uint64_t> items(M);
  for (std::uint32_t m = 0; m < M; ++m) {
    ModalitySpec spec;
    spec.name = detail::get_string(in);
    const auto kind = get_le<std::uint32_t>(in);
    if (kind > 1) throw FormatError("unknown likelihood code");
    spec.likelihood = kind == 0 ? LikelihoodKind::Bernoulli : LikelihoodKind::Gaussian;
    items[m] = get_le<std::uint64_t>(in);
    const auto dim = get_le<std::uint64_t>(in);
    if (items[m] > kMaxItems || dim == 0 || dim > kMaxDim) throw FormatError("implausible pool shape");
    spec.obs_dim = dim;
    ds.modalities.push_back(spec);
  }
  for (std::uint32_t m = 0; m < M; ++m) {
    UnimodalPool pool;
    std::vector<double> values(items[m] * ds.modalities[m].obs_dim);
    for (double& v : values) v = detail::get_f64(in);
    pool.obs = DenseArray(Shape{items[m], ds.modalities[m].obs_dim}, std::move(values));
    pool.labels.resize(items[m]);
    for (std::size_t& c : pool.labels) c = get_le<std::uint64_t>(in);
    ds.pools.push_back(std::move(pool));
  }
  const auto P = get_le<std::uint64_t>(in);
  if (P > kMaxItems) throw FormatError("implausible pair count");
  ds.pairs_per_instance = get_le<std::uint64_t>(in);
  ds.pairing_seed = get_le<std::uint64_t>(in);
  ds.pairs.assign(M, std::vector<std::size_t>(P));
  for (auto& column : ds.pairs)
    for (std::size_t& i : column) i = get_le<std::uint64_t>(in);
  ds.related.resize(P);
  for (std::uint8_t& r : ds.related) r = get_le<std::uint8_t>(in);
  ds.validate();
  return ds;
}

void save_dataset(const std::filesystem::path& path, const PairedDataset& ds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_dataset(out, ds);
}

PairedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset '" + path.string() + "'");
  return read_dataset(in);
}

void write_dataset_csv(std::ostream& out, const PairedDataset& ds) {
  out << "pair";
  for (const ModalitySpec& m : ds.modalities) out << ",index_" << m.name;
  out << ",related";
  for (const ModalitySpec& m : ds.modalities) out << ",label_" << m.name;
  out << '\n';
  for (std::size_t p = 0; p < ds.size(); ++p) {
    out << p;
    for (std::size_t m = 0; m < ds.num_modalities(); ++m) out << ',' << ds.pairs[m][p];
    out << ',' << static_cast<int>(ds.related[p]);
    for (std::size_t m = 0; m < ds.num_modalities(); ++m) out << ',' << ds.label(m, p);
    out << '\n';
  }
}

}  // namespace cmvae
