#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rstan::harness {

// One randomly drawn instance per seed; returns the max relative error.
struct GradCheckCase {
  std::string op;
  std::function<double(std::uint64_t seed)> run;
};

struct GradCheckEntry {
  std::string op;
  std::uint64_t seed = 0;
  double error = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;

  std::size_t failures() const;
  bool all_passed() const { return failures() == 0; }
};

// Every differentiable op plus the STA, VFE, loss and toy rSTAN composites.
std::vector<GradCheckCase> default_gradcheck_cases();

// Elementwise product whose backward drops the second input's gradient.
GradCheckCase negative_control_case();

// Instance i of every case uses seed derive_seed(base_seed, i). A case that
// throws is recorded as a failure with an infinite error.
GradCheckReport run_gradcheck_suite(std::span<const GradCheckCase> cases, std::size_t instances = 20,
                                    double tolerance = 1e-4, std::uint64_t base_seed = 0);

// Columns: op, seed, max_rel_error, pass.
void write_gradcheck_csv(const std::filesystem::path& path, const GradCheckReport& report);

}  // namespace rstan::harness
