#include "rstan/harness/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "rstan/core/adam.hpp"
#include "rstan/core/checkpoint.hpp"
#include "rstan/core/errors.hpp"
#include "rstan/core/ops.hpp"
#include "rstan/core/random.hpp"
#include "rstan/metrics/metrics.hpp"

namespace rstan::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using model::ModelKind;
using model::Network;

namespace {

constexpr std::uint64_t kTrainClipStream = 11;
constexpr std::uint64_t kTestClipStream = 12;
constexpr std::uint64_t kShuffleStream = 13;
constexpr std::uint64_t kDropoutStream = 14;
constexpr std::uint64_t kCrossClipStream = 15;

enum class Stage { kRppg, kClassifier, kJoint };

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kRppg: return "rppg";
    case Stage::kClassifier: return "classifier";
    case Stage::kJoint: return "joint";
  }
  return "?";
}

bool is_cnn1d(const Network& net) { return net.config().kind == ModelKind::kCnn1d; }

Var model_input(Tape& tape, const Network& net, const Batch& b) {
  return tape.constant(is_cnn1d(net) ? b.signal : b.video);
}

std::vector<Parameter*> stage_parameters(Network& net, Stage stage) {
  ParamRegistry reg = net.registry();
  std::vector<Parameter*> out;
  for (const auto& e : reg.entries()) {
    if (!e.param) continue;
    const bool rppg = e.name.starts_with("rppg.");
    const bool classifier = !rppg;
    if (stage == Stage::kJoint || (stage == Stage::kRppg && rppg) || (stage == Stage::kClassifier && classifier))
      out.push_back(e.param);
  }
  return out;
}

json checkpoint_meta_network(const model::NetworkConfig& n, const std::string& preset) {
  return {{"model", model::to_string(n.kind)}, {"preset", preset},         {"frames", n.frames},
          {"frame_size", n.frame_size},        {"classes", n.num_classes}, {"seed", n.seed}};
}

json sampler_json(const data::SamplerConfig& s) {
  return {{"mode", data::to_string(s.mode)},
          {"clip_length", s.clip_length},
          {"omit_first", s.omit_first},
          {"segment_stride", s.segment_stride}};
}

data::SamplerConfig sampler_from_json(const json& j) {
  data::SamplerConfig s;
  s.mode = data::parse_sampler_mode(j.at("mode").get<std::string>());
  s.clip_length = j.at("clip_length").get<std::size_t>();
  s.omit_first = j.at("omit_first").get<std::size_t>();
  s.segment_stride = j.at("segment_stride").get<std::size_t>();
  return s;
}

class FoldTrainer {
 public:
  // pulse_train / pulse_test, when given, replace the task clips during the
  // rPPG stage.
  FoldTrainer(const RunConfig& cfg, Network& net, const ClipSet& train, const ClipSet& test, const ClipSet* pulse_train,
              const ClipSet* pulse_test, MetricLog& log, int fold)
      : cfg_(cfg), net_(net), train_(train), test_(test), pulse_train_(pulse_train), pulse_test_(pulse_test), log_(log),
        fold_(fold),
        dropout_rng_(derive_seed(derive_seed(cfg.seed, kDropoutStream), std::uint64_t(fold))) {}

  void run_stage(Stage stage, std::size_t epochs) {
    if (epochs == 0) return;
    AdamConfig ac;
    ac.learning_rate = cfg_.learning_rate;
    ac.decay_gamma = cfg_.decay_gamma;
    ac.decay_every = cfg_.decay_every;
    Adam opt(stage_parameters(net_, stage), ac);
    std::vector<Parameter*> all = net_.registry().parameters();
    const std::uint64_t shuffle_base =
        derive_seed(derive_seed(derive_seed(cfg_.seed, kShuffleStream), std::uint64_t(fold_)), std::uint64_t(stage));

    const bool pulse = stage == Stage::kRppg && pulse_train_;
    const ClipSet& train = pulse ? *pulse_train_ : train_;
    const ClipSet& test = pulse ? *pulse_test_ : test_;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      opt.set_epoch(int(epoch));
      const auto order = shuffled(train.clips.size(), derive_seed(shuffle_base, epoch));
      double loss_sum = 0.0;
      std::size_t correct = 0, seen = 0, batches = 0;
      metrics::PearsonLossStats stats;
      for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
        const Batch b = make_batch(train, std::span(order).subspan(start, end - start));
        Tape tape;
        nn::Context ctx{tape, nn::Mode::kTrain, &dropout_rng_};
        Var logits;
        Var loss;
        try {
          loss = stage_loss(stage, ctx, b, logits, stats);
        } catch (const NumericError& e) {
          throw diverged(stage, epoch, e.what());
        }
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) throw diverged(stage, epoch, "non-finite loss");
        for (Parameter* p : all) p->zero_grad();
        tape.backward(loss);
        opt.step();
        loss_sum += lv;
        ++batches;
        if (logits.valid()) {
          const auto pred = metrics::argmax_rows(logits.value());
          for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
        }
        seen += b.labels.size();
      }
      const int ep = int(epoch) + 1;
      row(stage, ep, "train", "running_loss", loss_sum / double(batches));
      if (stage != Stage::kRppg) row(stage, ep, "train", "running_accuracy", double(correct) / double(seen));
      if (stats.degenerate_rows) row(stage, ep, "train", "degenerate_rows", double(stats.degenerate_rows));
      if (cfg_.save_checkpoints) save_last_good();
      if (cfg_.eval_train_set)
        log_eval(stage, ep, "train", evaluate(net_, train, cfg_.task, cfg_.batch_size, !pulse));
      EvalResult result;
      try {
        result = evaluate(net_, test, cfg_.task, cfg_.batch_size, !pulse);
      } catch (const NumericError& e) {
        throw diverged(stage, epoch, e.what());
      }
      log_eval(stage, ep, "test", result);
      spdlog::info("{} fold {} {} epoch {}/{}: loss {:.4f}{}", cfg_.run_id, fold_, stage_name(stage), ep, epochs,
                   loss_sum / double(batches), summary(result));
    }
  }

  void set_checkpoint_meta(std::map<std::string, std::string> meta) { meta_ = std::move(meta); }

  void log_eval(Stage stage, int epoch, const std::string& split, const EvalResult& r) {
    for (const auto& [k, v] : r.metrics) row(stage_name(stage), epoch, split, k, v);
  }

  void row(Stage stage, int epoch, const std::string& split, const std::string& metric, double v) {
    row(stage_name(stage), epoch, split, metric, v);
  }
  void row(const std::string& stage, int epoch, const std::string& split, const std::string& metric, double v) {
    log_.append({cfg_.run_id, stage, epoch, split, fold_, metric, v});
  }

 private:
  NumericError diverged(Stage stage, std::size_t epoch, const std::string& what) const {
    return NumericError(std::string("training diverged in stage ") + stage_name(stage) + ", epoch " +
                        std::to_string(epoch + 1) + ", fold " + std::to_string(fold_) + ": " + what +
                        (last_good_.empty() ? std::string("; no checkpoint saved yet")
                                            : "; last good checkpoint " + last_good_.string()));
  }

  Var stage_loss(Stage stage, nn::Context& ctx, const Batch& b, Var& logits, metrics::PearsonLossStats& stats) {
    Tape& tape = ctx.tape;
    switch (stage) {
      case Stage::kRppg: {
        Var out = net_.rppg->forward(ctx, tape.constant(b.video));
        return metrics::neg_pearson_loss(out, tape.constant(b.signal), metrics::DegeneratePolicy::kNeutral, &stats);
      }
      case Stage::kClassifier:
        // Two-branch models classify through their own head on top of the frozen rPPG branch.
        logits = net_.forward(ctx, model_input(tape, net_, b)).logits;
        return metrics::cross_entropy(logits, b.labels);
      case Stage::kJoint: {
        JointLoss j = joint_loss(ctx, net_, b, cfg_.lambda_rppg, &stats);
        logits = j.logits;
        return j.total;
      }
    }
    throw ContractError("unknown stage");
  }

  static std::string summary(const EvalResult& r) {
    std::string s;
    for (const char* k : {"accuracy", "auc", "pearson"})
      if (auto it = r.metrics.find(k); it != r.metrics.end()) s += fmt::format(", test {} {:.4f}", k, it->second);
    return s;
  }

  void save_last_good() {
    last_good_ = cfg_.run_dir() / ("fold" + std::to_string(fold_) + ".last_good.ckpt");
    ParamRegistry reg = net_.registry();
    save_checkpoint(last_good_, reg, meta_);
  }

  const RunConfig& cfg_;
  Network& net_;
  const ClipSet& train_;
  const ClipSet& test_;
  const ClipSet* pulse_train_;
  const ClipSet* pulse_test_;
  MetricLog& log_;
  int fold_;
  Rng dropout_rng_;
  fs::path last_good_;
  std::map<std::string, std::string> meta_;
};

std::vector<Stage> stages_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::kDeepRppg: return {Stage::kRppg};
    case ModelKind::kStan:
    case ModelKind::kStanNoAttention:
    case ModelKind::kCnn1d: return {Stage::kClassifier};
    default: return {Stage::kRppg, Stage::kClassifier, Stage::kJoint};
  }
}

std::size_t stage_epochs(const RunConfig& cfg, Stage s) {
  switch (s) {
    case Stage::kRppg: return cfg.epochs_rppg;
    case Stage::kClassifier: return cfg.epochs_classifier;
    case Stage::kJoint: return cfg.epochs_joint;
  }
  return 0;
}

// Every video, split by whether its subject is held out.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> subject_partition(const data::Dataset& data,
                                                                                const std::vector<int>& test_subjects) {
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool test =
        std::find(test_subjects.begin(), test_subjects.end(), data.records()[i].subject_id) != test_subjects.end();
    (test ? out.second : out.first).push_back(i);
  }
  return out;
}

std::vector<std::size_t> pick(const std::vector<std::size_t>& samples, const std::vector<std::size_t>& positions) {
  std::vector<std::size_t> out;
  for (std::size_t p : positions) out.push_back(samples[p]);
  return out;
}

}  // namespace

JointLoss joint_loss(nn::Context& ctx, Network& net, const Batch& b, double lambda_rppg,
                     metrics::PearsonLossStats* stats) {
  Tape& tape = ctx.tape;
  model::NetworkOutput out = net.forward(ctx, model_input(tape, net, b));
  Var ce = metrics::cross_entropy(out.logits, b.labels);
  Var np = metrics::neg_pearson_loss(out.rppg, tape.constant(b.signal), metrics::DegeneratePolicy::kNeutral, stats);
  return {add(ce, scale(np, lambda_rppg)), out.logits};
}

data::Dataset open_dataset(const RunConfig& cfg) {
  return cfg.manifest.empty() ? data::Dataset::synthetic(cfg.generator) : data::Dataset::open(cfg.manifest);
}

std::vector<data::Fold> make_folds(const RunConfig& cfg, const data::Dataset& data,
                                   const std::vector<std::size_t>& samples) {
  std::vector<int> subject_of;
  for (std::size_t i : samples) subject_of.push_back(data.records()[i].subject_id);
  switch (cfg.protocol) {
    case Protocol::kLoso: return data::split_loso(subject_of);
    case Protocol::kKfold: return data::split_kfold(subject_of, cfg.folds, cfg.seed);
    case Protocol::kHoldout:
    case Protocol::kCrossDistribution: {
      std::vector<int> test = cfg.holdout_subjects;
      if (test.empty()) {
        const std::set<int> distinct(subject_of.begin(), subject_of.end());
        const std::vector<int> all(distinct.begin(), distinct.end());
        const std::size_t n = std::max<std::size_t>(1, all.size() / 5);
        test.assign(all.end() - long(n), all.end());
      }
      return {data::split_holdout(subject_of, test)};
    }
  }
  throw ContractError("unknown protocol");
}

model::NetworkConfig network_config(const RunConfig& cfg, std::size_t frames, std::size_t frame_size) {
  model::NetworkConfig n;
  n.kind = cfg.model;
  n.backbone = model::BackboneConfig::from_preset(cfg.preset);
  n.num_classes = num_classes(cfg.task);
  n.frames = frames;
  n.frame_size = frame_size;
  n.seed = cfg.seed;
  return n;
}

EvalResult evaluate(Network& net, const ClipSet& set, Task task, std::size_t batch_size, bool classify) {
  EvalResult r;
  const bool classifier = classify && model::has_classifier(net.config().kind);
  const bool rppg = model::has_rppg_branch(net.config().kind);
  double ce_sum = 0.0, np_sum = 0.0, r_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t start = 0; start < set.clips.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.clips.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(set, idx);
    Tape tape;
    nn::Context ctx{tape};
    model::NetworkOutput out = net.forward(ctx, model_input(tape, net, b));
    if (classifier) {
      const Tensor& z = out.logits.value();
      const std::size_t c = z.dim(1);
      const auto pred = metrics::argmax_rows(z);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        // Per-clip terms keep the sum independent of how clips are batched.
        const double* row = z.data().data() + k * c;
        const double top = *std::max_element(row, row + c);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - top);
        ce_sum += top + std::log(denom) - row[b.labels[k]];
        r.predictions.push_back(pred[k]);
        r.labels.push_back(b.labels[k]);
        if (task == Task::kBinary) {
          // Softmax probability of class 1, in a numerically stable form.
          r.scores.push_back(1.0 / (1.0 + std::exp(z[k * c] - z[k * c + 1])));
        }
      }
    }
    if (rppg) {
      const Tensor& s = out.rppg.value();
      const std::size_t L = s.dim(1);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        double rk = 0.0;
        try {
          rk = metrics::pearson(s.data().subspan(k * L, L), b.signal.data().subspan(k * L, L));
        } catch (const DegenerateSignalError&) {
          rk = 0.0;  // a flat prediction carries no pulse
        }
        r_sum += rk;
        np_sum += 1.0 - rk;
      }
    }
    n += idx.size();
  }
  if (classifier) {
    r.metrics["loss"] = ce_sum / double(n);
    r.metrics["accuracy"] = metrics::accuracy(r.predictions, r.labels);
    const bool both = std::count(r.labels.begin(), r.labels.end(), 1) > 0 &&
                      std::count(r.labels.begin(), r.labels.end(), 0) > 0;
    if (task == Task::kBinary && both) r.metrics["auc"] = metrics::auc(r.scores, r.labels);
  }
  if (rppg) {
    r.metrics["pearson"] = r_sum / double(n);
    r.metrics["rppg_loss"] = np_sum / double(n);
  }
  return r;
}

RunRecord train(const RunConfig& cfg) {
  cfg.validate();
  const data::Dataset data = open_dataset(cfg);
  const std::vector<std::size_t> samples = task_samples(data, cfg.task);
  const std::vector<data::Fold> folds = make_folds(cfg, data, samples);

  RunRecord rec;
  rec.run_id = cfg.run_id;
  rec.config = cfg;
  if (cfg.save_checkpoints) {
    fs::create_directories(cfg.run_dir());
    save_run_config(cfg.run_dir() / "config.json", cfg);
  }

  std::optional<data::Dataset> cross;
  if (cfg.protocol == Protocol::kCrossDistribution) cross = data::Dataset::synthetic(cfg.cross_generator);

  std::map<std::string, std::vector<double>> finals;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    const int fold = int(k);
    const auto train_ids = pick(samples, folds[k].train), test_ids = pick(samples, folds[k].test);
    const ClipSet train_set = build_clips(data, train_ids, cfg.task, cfg.sampler, derive_seed(cfg.seed, kTrainClipStream));
    const ClipSet test_set = build_clips(data, test_ids, cfg.task, cfg.sampler, derive_seed(cfg.seed, kTestClipStream));
    std::optional<ClipSet> pulse_train, pulse_test;
    if (model::has_rppg_branch(cfg.model) && cfg.rppg_all_videos) {
      const auto [tr, te] = subject_partition(data, folds[k].test_subjects);
      pulse_train = build_clips(data, tr, Task::kFiveClass, cfg.sampler, derive_seed(cfg.seed, kTrainClipStream));
      pulse_test = build_clips(data, te, Task::kFiveClass, cfg.sampler, derive_seed(cfg.seed, kTestClipStream));
    }
    const model::NetworkConfig ncfg = network_config(cfg, train_set.length, train_set.height);
    Network net = Network::create(ncfg);

    std::map<std::string, std::string> meta{
        {"run_id", cfg.run_id},
        {"network", checkpoint_meta_network(ncfg, cfg.preset).dump()},
        {"task", to_string(cfg.task)},
        {"protocol", to_string(cfg.protocol)},
        {"fold", std::to_string(fold)},
        {"test_subjects", json(folds[k].test_subjects).dump()},
        {"sampler", sampler_json(cfg.sampler).dump()},
        {"clip_seed", std::to_string(derive_seed(cfg.seed, kTestClipStream))},
        {"rppg_all_videos", cfg.rppg_all_videos ? "1" : "0"},
    };
    const bool pulse_only = pulse_test && !model::has_classifier(cfg.model);
    FoldTrainer trainer(cfg, net, train_set, test_set, pulse_train ? &*pulse_train : nullptr,
                        pulse_test ? &*pulse_test : nullptr, rec.log, fold);
    trainer.set_checkpoint_meta(meta);
    spdlog::info("{} fold {}: {} train clips, {} test clips, {} parameters", cfg.run_id, fold,
                 pulse_only ? pulse_train->clips.size() : train_set.clips.size(),
                 pulse_only ? pulse_test->clips.size() : test_set.clips.size(), net.parameter_count());
    int total_epochs = 0;
    for (Stage s : stages_for(cfg.model)) {
      trainer.run_stage(s, stage_epochs(cfg, s));
      total_epochs += int(stage_epochs(cfg, s));
    }

    const EvalResult final_test = evaluate(net, pulse_only ? *pulse_test : test_set, cfg.task, cfg.batch_size);
    for (const auto& [m, v] : final_test.metrics) {
      trainer.row("final", total_epochs, "test", m, v);
      finals[m].push_back(v);
    }
    rec.fold_results.push_back(final_test);
    if (cross) {
      const Task t = pulse_only ? Task::kFiveClass : cfg.task;
      const ClipSet cross_set =
          build_clips(*cross, task_samples(*cross, t), t, cfg.sampler, derive_seed(cfg.seed, kCrossClipStream));
      const EvalResult r = evaluate(net, cross_set, cfg.task, cfg.batch_size);
      for (const auto& [m, v] : r.metrics) trainer.row("final", total_epochs, "cross", m, v);
      rec.cross_results.push_back(r);
    }
    if (cfg.save_checkpoints) {
      const fs::path ckpt = cfg.run_dir() / ("fold" + std::to_string(fold) + ".ckpt");
      ParamRegistry reg = net.registry();
      save_checkpoint(ckpt, reg, meta);
      fs::remove(cfg.run_dir() / ("fold" + std::to_string(fold) + ".last_good.ckpt"));
      rec.checkpoints.push_back(ckpt);
    }
  }
  if (folds.size() > 1)
    for (const auto& [m, vs] : finals) {
      double mean = 0.0;
      for (double v : vs) mean += v;
      rec.log.append({cfg.run_id, "final", 0, "test", -1, m + "_mean", mean / double(vs.size())});
    }
  if (cfg.save_checkpoints) rec.log.write_csv(cfg.run_dir() / "metrics.csv");
  return rec;
}

EvalResult evaluate_checkpoint(const fs::path& path, const data::Dataset& data, Protocol requested,
                               std::size_t batch_size) {
  const Checkpoint ckpt = load_checkpoint(path);
  auto meta = [&](const std::string& key) -> const std::string& {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw FormatError(path.string() + ": checkpoint lacks '" + key + "' metadata");
    return it->second;
  };
  json net_meta, subjects_meta, sampler_meta;
  try {
    net_meta = json::parse(meta("network"));
    subjects_meta = json::parse(meta("test_subjects"));
    sampler_meta = json::parse(meta("sampler"));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const Task task = parse_task(meta("task"));
  const Protocol trained = parse_protocol(meta("protocol"));
  const bool same = requested == trained ||
                    (requested == Protocol::kHoldout && trained == Protocol::kCrossDistribution);
  if (requested != Protocol::kCrossDistribution && !same)
    throw ContractError("checkpoint was trained under " + to_string(trained) + " (fold " + meta("fold") +
                        "); cannot evaluate it under " + to_string(requested));

  model::NetworkConfig ncfg;
  ncfg.kind = model::parse_model_kind(net_meta.at("model").get<std::string>());
  ncfg.backbone = model::BackboneConfig::from_preset(net_meta.at("preset").get<std::string>());
  ncfg.frames = net_meta.at("frames").get<std::size_t>();
  ncfg.frame_size = net_meta.at("frame_size").get<std::size_t>();
  ncfg.num_classes = net_meta.at("classes").get<std::size_t>();
  ncfg.seed = net_meta.at("seed").get<std::uint64_t>();
  Network net = Network::create(ncfg);
  restore(net.registry(), ckpt);

  // Pulse-only models trained on every video score every video.
  const bool pulse_only = !model::has_classifier(ncfg.kind) && ckpt.meta.count("rppg_all_videos") &&
                          meta("rppg_all_videos") == "1";
  const Task clip_task = pulse_only ? Task::kFiveClass : task;
  std::vector<std::size_t> samples = task_samples(data, clip_task);
  if (requested != Protocol::kCrossDistribution) {
    const auto test = subjects_meta.get<std::vector<int>>();
    std::erase_if(samples, [&](std::size_t i) {
      return std::find(test.begin(), test.end(), data.records()[i].subject_id) == test.end();
    });
    if (samples.empty()) throw ContractError("no samples of the checkpoint's test subjects in this dataset");
  }
  const std::uint64_t clip_seed = std::stoull(meta("clip_seed"));
  const ClipSet set = build_clips(data, samples, clip_task, sampler_from_json(sampler_meta), clip_seed);
  if (set.length != ncfg.frames || set.height != ncfg.frame_size)
    throw ContractError("dataset clips are " + std::to_string(set.length) + "x" + std::to_string(set.height) +
                        ", checkpoint expects " + std::to_string(ncfg.frames) + "x" + std::to_string(ncfg.frame_size));
  return evaluate(net, set, task, batch_size);
}

}  // namespace rstan::harness
