#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rstan/data/dataset.hpp"
#include "rstan/data/sampling.hpp"
#include "rstan/model/networks.hpp"

namespace rstan::harness {

// binary: T0 against T4; five-class: T0..T4.
enum class Task { kBinary, kFiveClass };
enum class Protocol { kHoldout, kLoso, kKfold, kCrossDistribution };

std::string to_string(Task t);
std::string to_string(Protocol p);
Task parse_task(const std::string& s);
Protocol parse_protocol(const std::string& s);

inline constexpr int kRunConfigVersion = 1;

struct RunConfig {
  std::string run_id = "run";
  Task task = Task::kBinary;
  model::ModelKind model = model::ModelKind::kRstan;
  std::string preset = "toy";

  // Adam with step decay.
  double learning_rate = 2e-4;
  double decay_gamma = 0.8;
  int decay_every = 10;

  // Weight of the neg-Pearson term during the joint stage.
  double lambda_rppg = 0.5;
  // Stage lengths: rPPG branch, classifier (STAN or 1D-CNN), joint.
  std::size_t epochs_rppg = 10;
  std::size_t epochs_classifier = 10;
  std::size_t epochs_joint = 5;
  std::size_t batch_size = 4;
  // Stage 1 needs no labels, so it trains on every video of the training
  // subjects rather than only the task's.
  bool rppg_all_videos = true;
  std::uint64_t seed = 0;

  // Empty manifest: render the dataset from `generator`.
  std::string manifest;
  data::GeneratorConfig generator;
  // Target data for the cross-distribution protocol.
  data::GeneratorConfig cross_generator = data::GeneratorConfig::from_profile("B");

  Protocol protocol = Protocol::kHoldout;
  std::size_t folds = 5;
  // Holdout test subjects; empty means the last fifth of the subjects.
  std::vector<int> holdout_subjects;
  data::SamplerConfig sampler;

  std::string output_dir = "runs";
  bool save_checkpoints = true;
  // Also score the training clips in eval mode after every epoch.
  bool eval_train_set = false;

  void validate() const;
  std::filesystem::path run_dir() const { return std::filesystem::path(output_dir) / run_id; }
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

std::size_t num_classes(Task t);

}  // namespace rstan::harness
