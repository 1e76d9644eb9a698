#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cmvae/dense_array.hpp"
#include "cmvae/model.hpp"

namespace cmvae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedArrays = std::vector<std::pair<std::string, DenseArray>>;

/// Layout: magic "CMVAE", u32 version, u32 entry count, then per entry
/// {u32 name length, name bytes, u32 rank, u64 extents...}, then every
/// array's entries as little-endian f64 in table order.
void write_checkpoint(std::ostream& out, const NamedArrays& arrays);
NamedArrays read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const NamedArrays& arrays);
NamedArrays load_checkpoint(const std::filesystem::path& path);

NamedArrays to_named_arrays(const ParameterStore& store, const std::string& prefix = "");
/// Overwrites every parameter of `store` from the entries named prefix + name.
/// Missing entries or shape mismatches throw FormatError.
void assign_from(ParameterStore& store, const NamedArrays& arrays, const std::string& prefix = "");

}  // namespace cmvae
