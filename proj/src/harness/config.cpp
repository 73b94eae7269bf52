#include "rstan/harness/config.hpp"

#include <fstream>

#include "rstan/core/errors.hpp"

namespace rstan::harness {

using nlohmann::json;

std::string to_string(Task t) { return t == Task::kBinary ? "binary" : "five-class"; }

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kHoldout: return "holdout";
    case Protocol::kLoso: return "loso";
    case Protocol::kKfold: return "kfold";
    case Protocol::kCrossDistribution: return "cross-distribution";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "binary") return Task::kBinary;
  if (s == "five-class") return Task::kFiveClass;
  throw ConfigError("unknown task '" + s + "' (expected binary or five-class)");
}

Protocol parse_protocol(const std::string& s) {
  if (s == "holdout") return Protocol::kHoldout;
  if (s == "loso") return Protocol::kLoso;
  if (s == "kfold") return Protocol::kKfold;
  if (s == "cross-distribution") return Protocol::kCrossDistribution;
  throw ConfigError("unknown protocol '" + s + "' (expected holdout, loso, kfold or cross-distribution)");
}

std::size_t num_classes(Task t) { return t == Task::kBinary ? 2 : 5; }

void RunConfig::validate() const {
  if (run_id.empty() || run_id.find('/') != std::string::npos) throw ConfigError("run_id must be a plain name");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(decay_gamma > 0) || decay_every <= 0) throw ConfigError("invalid learning-rate decay");
  if (lambda_rppg < 0) throw ConfigError("lambda_rppg must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (protocol == Protocol::kKfold && folds < 2) throw ConfigError("kfold needs folds >= 2");
  if (preset != "toy" && preset != "paper") throw ConfigError("unknown preset '" + preset + "'");
  generator.validate();
  cross_generator.validate();
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"version", kRunConfigVersion},
           {"run_id", c.run_id},
           {"task", to_string(c.task)},
           {"model", model::to_string(c.model)},
           {"preset", c.preset},
           {"optimizer", {{"learning_rate", c.learning_rate}, {"decay_gamma", c.decay_gamma}, {"decay_every", c.decay_every}}},
           {"lambda_rppg", c.lambda_rppg},
           {"epochs", {{"rppg", c.epochs_rppg}, {"classifier", c.epochs_classifier}, {"joint", c.epochs_joint}}},
           {"batch_size", c.batch_size},
           {"rppg_all_videos", c.rppg_all_videos},
           {"seed", c.seed},
           {"manifest", c.manifest},
           {"generator", c.generator},
           {"cross_generator", c.cross_generator},
           {"protocol", to_string(c.protocol)},
           {"folds", c.folds},
           {"holdout_subjects", c.holdout_subjects},
           {"sampler",
            {{"mode", data::to_string(c.sampler.mode)},
             {"clip_length", c.sampler.clip_length},
             {"omit_first", c.sampler.omit_first},
             {"segment_stride", c.sampler.segment_stride}}},
           {"output_dir", c.output_dir},
           {"save_checkpoints", c.save_checkpoints},
           {"eval_train_set", c.eval_train_set}};
}

void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  const int version = j.value("version", kRunConfigVersion);
  if (version != kRunConfigVersion) throw ConfigError("unsupported run config version " + std::to_string(version));
  try {
    auto get = [&](const json& obj, const char* key, auto& field) {
      if (obj.contains(key)) obj.at(key).get_to(field);
    };
    get(j, "run_id", c.run_id);
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("model")) c.model = model::parse_model_kind(j.at("model").get<std::string>());
    get(j, "preset", c.preset);
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      get(o, "learning_rate", c.learning_rate);
      get(o, "decay_gamma", c.decay_gamma);
      get(o, "decay_every", c.decay_every);
    }
    get(j, "lambda_rppg", c.lambda_rppg);
    if (j.contains("epochs")) {
      const json& e = j.at("epochs");
      get(e, "rppg", c.epochs_rppg);
      get(e, "classifier", c.epochs_classifier);
      get(e, "joint", c.epochs_joint);
    }
    get(j, "batch_size", c.batch_size);
    get(j, "rppg_all_videos", c.rppg_all_videos);
    get(j, "seed", c.seed);
    get(j, "manifest", c.manifest);
    get(j, "generator", c.generator);
    get(j, "cross_generator", c.cross_generator);
    if (j.contains("protocol")) c.protocol = parse_protocol(j.at("protocol").get<std::string>());
    get(j, "folds", c.folds);
    get(j, "holdout_subjects", c.holdout_subjects);
    if (j.contains("sampler")) {
      const json& s = j.at("sampler");
      if (s.contains("mode")) c.sampler.mode = data::parse_sampler_mode(s.at("mode").get<std::string>());
      get(s, "clip_length", c.sampler.clip_length);
      get(s, "omit_first", c.sampler.omit_first);
      get(s, "segment_stride", c.sampler.segment_stride);
    }
    get(j, "output_dir", c.output_dir);
    get(j, "save_checkpoints", c.save_checkpoints);
    get(j, "eval_train_set", c.eval_train_set);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream os(path);
  os << json(c).dump(2) << '\n';
  if (!os) throw ContractError("cannot write " + path.string());
}

}  // namespace rstan::harness
