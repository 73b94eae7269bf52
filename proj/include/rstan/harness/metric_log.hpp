#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rstan::harness {

struct MetricRow {
  std::string run_id;
  std::string stage;
  int epoch = 0;
  std::string split;  // train, test, cross
  int fold = 0;       // -1 for aggregates over folds
  std::string metric;
  double value = 0.0;
};

// Append-only metric log. CSV columns: run_id,stage,epoch,split,fold,metric,value.
class MetricLog {
 public:
  void append(MetricRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricRow>& rows() const { return rows_; }

  // Values print with 17 significant digits so reruns compare exactly.
  void write_csv(const std::filesystem::path& path) const;
  static MetricLog read_csv(const std::filesystem::path& path);

 private:
  std::vector<MetricRow> rows_;
};

std::string format_value(double v);

}  // namespace rstan::harness
