#include "rstan/harness/metric_log.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rstan/core/errors.hpp"

namespace rstan::harness {

namespace {

constexpr const char* kHeader = "run_id,stage,epoch,split,fold,metric,value";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void MetricLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot write " + path.string());
  os << kHeader << '\n';
  for (const MetricRow& r : rows_)
    os << r.run_id << ',' << r.stage << ',' << r.epoch << ',' << r.split << ',' << r.fold << ',' << r.metric << ','
       << format_value(r.value) << '\n';
}

MetricLog MetricLog::read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw FormatError(path.string() + ": missing metric header");
  MetricLog log;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 7) throw FormatError(path.string() + ": line " + std::to_string(lineno) + " has " +
                                             std::to_string(cells.size()) + " columns");
    try {
      log.append({cells[0], cells[1], std::stoi(cells[2]), cells[3], std::stoi(cells[4]), cells[5], std::stod(cells[6])});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad number on line " + std::to_string(lineno));
    }
  }
  return log;
}

}  // namespace rstan::harness
