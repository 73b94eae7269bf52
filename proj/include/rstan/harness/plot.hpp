#pragma once

#include <filesystem>
#include <vector>

#include "rstan/harness/metric_log.hpp"

namespace rstan::harness {

// One SVG line chart per (stage, metric) of the per-epoch rows, one series
// per (split, fold). Final and aggregate rows are skipped. Returns the files
// written.
std::vector<std::filesystem::path> plot_metrics(const MetricLog& log, const std::filesystem::path& out_dir);

}  // namespace rstan::harness
