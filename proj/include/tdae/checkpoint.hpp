// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tdae/tensor.hpp"

namespace tdae {

// Binary checkpoint layout (all integers and floats little-endian):
//
//   char[8]  magic "TDAECKPT"
//   u32      format version (1)
//   u32      metadata length M, then M bytes of UTF-8 JSON (run config)
//   u32      tensor count T, then T records of
//              u32 name length L, L bytes of name
//              u32 rank R, R x u64 dimensions
//              prod(dims) x f64 values, row-major
//
// Values are always stored as f64 regardless of training precision.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;
  ParameterSet<double> params;
};

template <typename Scalar>
void write_checkpoint(const std::filesystem::path& path, const ParameterSet<Scalar>& params,
                      const std::string& metadata);

/// Throws ConfigError on a malformed or truncated file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tdae
