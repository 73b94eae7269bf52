#pragma once

#include <filesystem>

#include "rstan/core/tensor.hpp"

namespace rstan::data {

// Layout: 8-byte magic "RSTNTNSR", u64 version (1), u64 rank, rank u64 dims,
// then the row-major payload as f64. Every integer and float is
// little-endian.
void write_tensor(const std::filesystem::path& path, const Tensor& t);

// FormatError naming the byte offset on bad magic, unknown version or
// truncation.
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace rstan::data
