#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "roifuse/tensor.hpp"

namespace roifuse::tensor {

/// Binary parameter container:
///   magic "RFCKPT\0\0", u32 version, u32 count, then per parameter
///   u32 name length, name bytes, u32 rank, u64 dims[rank],
///   f64 values[prod(dims)]; all integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ParameterSet& params);
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);

std::vector<Parameter> read_checkpoint(std::istream& is);
std::vector<Parameter> load_checkpoint(const std::filesystem::path& path);

/// Copies values into an existing parameter set. Every parameter must be
/// present with an identical shape and no extra entries may appear;
/// mismatches throw with the offending names and shapes.
void assign_parameters(ParameterSet& params, const std::vector<Parameter>& values);

}  // namespace roifuse::tensor
