#pragma once

#include <filesystem>

#include "morphlm/nn/tape.hpp"

namespace morphlm::nn {

// Named-tensor container, all integers little-endian:
//
//   "MLMCKPT\0"                      8-byte magic
//   u32 version (= 1)
//   u32 tensor count
//   per tensor:
//     u32 name length, name bytes (UTF-8)
//     u8  dtype (1 = float64, 2 = float32)
//     u32 rank, u64 dims[rank]
//     u64 byte offset (relative to payload start), u64 byte length
//   payload: raw little-endian values, tensors back to back in header order
//
// The payload begins immediately after the last header entry.

enum class DType : std::uint8_t { float64 = 1, float32 = 2 };

void save_parameters(const std::filesystem::path& path, const ParameterStore& params,
                     DType dtype = DType::float64);

/// Reads every tensor; gradients are zero-initialised.
ParameterStore load_parameters(const std::filesystem::path& path);

/// Overwrites values in `params` from `path`. Every parameter in `params` must
/// be present with the same shape; extra tensors in the file are an error.
void load_parameters_into(const std::filesystem::path& path, ParameterStore& params);

}  // namespace morphlm::nn
