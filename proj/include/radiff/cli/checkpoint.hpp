#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "radiff/numcore/layers.hpp"

namespace radiff::cli {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Named tensors, kept sorted by name.
using TensorMap = std::map<std::string, numcore::Tensor>;

// Layout: "RADIFFCK", u32 version, u64 count, then per tensor u32 name
// length, name, u32 rank, u64 dims, float32 values; all little-endian,
// closed by the CRC-32 of everything before it.
std::string encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

// Adds every parameter of `params` to `out`.
void collect(const numcore::ParamSet& params, TensorMap& out);
// Copies stored values into the parameters. Names and shapes must match
// one to one; entries under "meta." carry side data and are skipped.
void assign(numcore::ParamSet& params, const TensorMap& tensors);

}  // namespace radiff::cli
