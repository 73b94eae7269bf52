#include "rstan/harness/experiments.hpp"

#include <fstream>

#include "rstan/core/errors.hpp"
#include "rstan/harness/metric_log.hpp"
#include "rstan/harness/trainer.hpp"

namespace rstan::harness {

std::vector<StructureRow> compare_input_structures(const RunConfig& config) {
  std::vector<StructureRow> rows;
  for (data::SamplerMode mode : {data::SamplerMode::kDownsampled, data::SamplerMode::kRandom,
                                 data::SamplerMode::kMultisegment}) {
    RunConfig cfg = config;
    cfg.model = model::ModelKind::kStan;
    cfg.protocol = Protocol::kKfold;
    cfg.sampler.mode = mode;
    cfg.run_id = config.run_id + "-" + data::to_string(mode);
    const RunRecord rec = train(cfg);
    for (std::size_t k = 0; k < rec.fold_results.size(); ++k)
      rows.push_back({data::to_string(mode), int(k), cfg.seed, rec.fold_results[k].metrics.at("accuracy")});
  }
  return rows;
}

void write_structure_csv(const std::filesystem::path& path, const std::vector<StructureRow>& rows) {
  std::ofstream os(path);
  os << "structure,fold,seed,accuracy\n";
  for (const auto& r : rows) os << r.structure << ',' << r.fold << ',' << r.seed << ',' << format_value(r.accuracy) << '\n';
  if (!os) throw ContractError("cannot write " + path.string());
}

}  // namespace rstan::harness
