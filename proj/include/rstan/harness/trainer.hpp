#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstan/harness/clips.hpp"
#include "rstan/harness/config.hpp"
#include "rstan/harness/metric_log.hpp"
#include "rstan/metrics/metrics.hpp"
#include "rstan/model/networks.hpp"

namespace rstan::harness {

struct EvalResult {
  std::map<std::string, double> metrics;  // loss, accuracy, auc, pearson, rppg_loss
  std::vector<double> scores;             // P(class 1), binary task only
  std::vector<int> labels;
  std::vector<int> predictions;
};

struct RunRecord {
  std::string run_id;
  nlohmann::json config;
  MetricLog log;
  std::vector<std::filesystem::path> checkpoints;  // one per fold
  std::vector<EvalResult> fold_results;            // final test evaluation per fold
  std::vector<EvalResult> cross_results;           // cross-distribution protocol only
};

data::Dataset open_dataset(const RunConfig& cfg);

struct JointLoss {
  Var total;   // CE + lambda * neg-Pearson
  Var logits;
};

// The joint-stage objective on one batch.
JointLoss joint_loss(nn::Context& ctx, model::Network& net, const Batch& b, double lambda_rppg,
                     metrics::PearsonLossStats* stats = nullptr);

// Subject-disjoint folds over the task's samples; fold indices point into
// `samples`.
std::vector<data::Fold> make_folds(const RunConfig& cfg, const data::Dataset& data,
                                   const std::vector<std::size_t>& samples);

model::NetworkConfig network_config(const RunConfig& cfg, std::size_t frames, std::size_t frame_size);

// Scores every clip in eval mode. classify = false skips the classification
// metrics (the clips may carry labels of another task).
EvalResult evaluate(model::Network& net, const ClipSet& set, Task task, std::size_t batch_size, bool classify = true);

// Stage 1 trains the rPPG branch on neg-Pearson (on every video of the
// training subjects when rppg_all_videos is set), stage 2 the classifier on
// cross entropy, stage 3 everything on CE + lambda * neg-Pearson. Models
// without a branch skip its stage. Writes config.json, metrics.csv and one
// checkpoint per fold under the run directory when checkpoints are enabled.
RunRecord train(const RunConfig& cfg);

// Evaluates a saved checkpoint. `requested` must match the protocol it was
// trained under, except cross-distribution, which scores every task sample
// of `data`.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const data::Dataset& data,
                               Protocol requested, std::size_t batch_size = 8);

}  // namespace rstan::harness
