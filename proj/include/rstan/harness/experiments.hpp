#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rstan/harness/config.hpp"

namespace rstan::harness {

struct StructureRow {
  std::string structure;  // downsampled, random64, multisegment
  int fold = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

// Trains STAN under each input structure on the same k folds and seed.
// Returns 3 * k rows, grouped by structure.
std::vector<StructureRow> compare_input_structures(const RunConfig& config);

// Columns: structure, fold, seed, accuracy.
void write_structure_csv(const std::filesystem::path& path, const std::vector<StructureRow>& rows);

}  // namespace rstan::harness
