// Acceptance run: one PASS/FAIL line per criterion. Arguments select
// criteria by number (default: all). Exit status is nonzero when any
// selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "../support/oracles.hpp"
#include "rstan/core/checkpoint.hpp"
#include "rstan/core/ops.hpp"
#include "rstan/core/random.hpp"
#include "rstan/harness/experiments.hpp"
#include "rstan/harness/gradcheck_suite.hpp"
#include "rstan/harness/trainer.hpp"
#include "rstan/metrics/metrics.hpp"
#include "rstan/model/attention.hpp"
#include "rstan/model/networks.hpp"
#include "rstan/nn/functional.hpp"

using namespace rstan;
using namespace rstan::harness;
namespace fs = std::filesystem;
using model::ModelKind;
using nn::Dim3;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kWork = fs::temp_directory_path() / "rstan_acceptance";

// Settings shared by the training criteria.
constexpr double kLearningRate = 1e-3;
constexpr std::uint64_t kSeeds[] = {0, 1, 2};

RunConfig base_config(const std::string& id, ModelKind kind, std::uint64_t seed) {
  RunConfig c;
  c.run_id = id;
  c.model = kind;
  c.seed = seed;
  c.learning_rate = kLearningRate;
  c.output_dir = kWork.string();
  return c;
}

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

Tensor eval_op(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value();
}

Outcome gradient_fidelity() {
  const auto cases = default_gradcheck_cases();
  const GradCheckReport r = run_gradcheck_suite(cases, 20);
  std::map<std::string, double> worst;
  for (const auto& e : r.entries) worst[e.op] = std::max(worst[e.op], e.error);
  const auto top = std::max_element(worst.begin(), worst.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
  write_gradcheck_csv(kWork / "gradcheck.csv", r);
  return {r.all_passed(), fmt::format("{} ops x 20 instances, {} failures, worst {} at {:.2e} (tol 1e-4)", cases.size(),
                                      r.failures(), top->first, top->second)};
}

Outcome oracle_equivalence() {
  constexpr int kTrials = 50;
  std::map<std::string, double> worst;
  std::size_t auc_mismatch = 0;
  Rng rng(2024);
  for (int trial = 0; trial < kTrials; ++trial) {
    {
      const std::size_t ci = draw(rng, 1, 3), co = draw(rng, 1, 3);
      const Dim3 k{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 3)};
      const Dim3 s{draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 1, 2)};
      const Dim3 p{rng.index(k.t), rng.index(k.h), rng.index(k.w)};
      const Tensor x = rng.normal_tensor({draw(rng, 1, 2), ci, draw(rng, 3, 6), draw(rng, 3, 6), draw(rng, 3, 6)});
      const Tensor w = rng.normal_tensor({co, ci, k.t, k.h, k.w}), b = rng.normal_tensor({co});
      const Tensor got = eval_op([&](Tape& t) { return nn::conv3d(t.constant(x), t.constant(w), t.constant(b), s, p); });
      worst["conv3d"] = std::max(worst["conv3d"], max_abs_diff(got, oracle::conv3d(x, w, &b, s, p)));
    }
    {
      const std::size_t ci = draw(rng, 1, 3), co = draw(rng, 1, 3);
      const Dim3 k{draw(rng, 1, 4), draw(rng, 1, 3), draw(rng, 1, 3)};
      const Dim3 s{draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 1, 2)};
      const Dim3 p{rng.index(k.t / 2 + 1), rng.index(k.h / 2 + 1), rng.index(k.w / 2 + 1)};
      const Tensor x = rng.normal_tensor({draw(rng, 1, 2), ci, draw(rng, 2, 5), draw(rng, 2, 5), draw(rng, 2, 5)});
      const Tensor w = rng.normal_tensor({ci, co, k.t, k.h, k.w}), b = rng.normal_tensor({co});
      const Tensor got =
          eval_op([&](Tape& t) { return nn::conv_transpose3d(t.constant(x), t.constant(w), t.constant(b), s, p); });
      worst["deconv3d"] = std::max(worst["deconv3d"], max_abs_diff(got, oracle::conv_transpose3d(x, w, &b, s, p)));
    }
    for (bool is_max : {true, false}) {
      const Dim3 k{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 3)};
      const Dim3 s{draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 1, 2)};
      const Dim3 p{rng.index(k.t / 2 + 1), rng.index(k.h / 2 + 1), rng.index(k.w / 2 + 1)};
      const Tensor x = rng.normal_tensor({draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, 3, 6), draw(rng, 3, 6), draw(rng, 3, 6)});
      const Tensor got = eval_op([&](Tape& t) {
        return nn::pool3d(t.constant(x), is_max ? nn::PoolKind::kMax : nn::PoolKind::kAvg, k, s, p);
      });
      const std::string key = is_max ? "max_pool3d" : "avg_pool3d";
      worst[key] = std::max(worst[key], max_abs_diff(got, oracle::pool3d(x, is_max, k, s, p)));
    }
    {
      const std::size_t m = draw(rng, 1, 8), k = draw(rng, 1, 8), n = draw(rng, 1, 8);
      const Tensor a = rng.normal_tensor({m, k}), b = rng.normal_tensor({k, n});
      const Tensor got = eval_op([&](Tape& t) { return matmul(t.constant(a), t.constant(b)); });
      worst["matmul"] = std::max(worst["matmul"], max_abs_diff(got, oracle::matmul(a, b)));
    }
    {
      const std::size_t n = draw(rng, 2, 40);
      std::vector<double> scores;
      std::vector<int> labels;
      for (std::size_t i = 0; i < n; ++i) {
        scores.push_back(double(rng.index(6)) / 5.0);  // coarse grid forces ties
        labels.push_back(int(i < 1 ? 0 : i < 2 ? 1 : rng.index(2)));
      }
      const metrics::RankStatistic st = metrics::mann_whitney(scores, labels);
      const oracle::Fraction f = oracle::auc_pairwise(scores, labels);
      if (double(f.num) != 2.0 * st.u || f.den != 2LL * (long long)(st.positives * st.negatives)) ++auc_mismatch;
    }
    {
      const std::size_t len = draw(rng, 3, 64);
      std::vector<double> x(len), y(len);
      for (std::size_t i = 0; i < len; ++i) x[i] = rng.normal(), y[i] = 0.3 * x[i] + rng.normal();
      const Tensor got = eval_op([&](Tape& t) {
        return metrics::neg_pearson_loss(t.constant(Tensor({len}, x)), t.constant(Tensor({len}, y)));
      });
      worst["neg_pearson"] = std::max(worst["neg_pearson"], std::abs(got.item() - (1.0 - oracle::pearson(x, y))));
    }
  }
  bool ok = auc_mismatch == 0;
  std::string detail = fmt::format("{} instances each; auc exact mismatches {}", kTrials, auc_mismatch);
  for (const auto& [k, v] : worst) {
    ok = ok && v <= 1e-12;
    detail += fmt::format(", {} {:.1e}", k, v);
  }
  return {ok, detail + " (tol 1e-12)"};
}

Outcome equation_invariants() {
  double att = 0.0, msum = 0.0, mchan = 0.0, fe = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    model::NetworkConfig cfg;
    cfg.kind = ModelKind::kRstan;
    cfg.seed = seed;
    model::Network net = model::Network::create(cfg);
    Rng rng(100 + seed);
    const Tensor video = rng.uniform_tensor({2, 1, 16, 28, 28}, 0.0, 1.0);
    Tape tape;
    nn::Context ctx{tape};
    const model::NetworkOutput out = net.forward(ctx, tape.constant(video));
    const Tensor& a = out.trace.attention.value();
    const std::size_t n = a.dim(1);
    for (std::size_t b = 0; b < a.dim(0); ++b)
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a[(b * n + i) * n + j];
        att = std::max(att, std::abs(s - 1.0));
      }
    const Tensor& m = out.trace.m.value();
    const Tensor& z = out.trace.z_v.value();
    const Tensor& f = out.trace.f_e.value();
    const std::size_t N = m.dim(0), C = m.dim(1), T = m.dim(2), S = m.dim(3) * m.dim(4);
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) {
          double total = 0.0;
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t i = ((b * C + c) * T + t) * S + s, i0 = ((b * C + 0) * T + t) * S + s;
            total += m[i];
            mchan = std::max(mchan, std::abs(m[i] - m[i0]));
          }
          msum = std::max(msum, std::abs(total - 1.0));
        }
    for (std::size_t i = 0; i < f.size(); ++i) fe = std::max(fe, std::abs(f[i] - z[i] * (1.0 + m[i])));
  }
  double lo = 2.0, hi = 0.0, affine = 0.0;
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = draw(rng, 4, 64);
    const Tensor x = rng.normal_tensor({len}), y = rng.normal_tensor({len});
    const double a = rng.uniform(0.1, 5.0), c = rng.normal(0, 10);
    Tensor xs = x;
    for (double& v : xs.data()) v = a * v + c;
    Tape tape;
    const double l = metrics::neg_pearson_loss(tape.constant(x), tape.constant(y)).value().item();
    const double l2 = metrics::neg_pearson_loss(tape.constant(xs), tape.constant(y)).value().item();
    lo = std::min(lo, l), hi = std::max(hi, l);
    affine = std::max(affine, std::abs(l - l2));
  }
  const bool ok = att <= 1e-9 && msum <= 1e-9 && mchan == 0.0 && fe <= 1e-9 && lo >= 0.0 && hi <= 2.0 && affine <= 1e-9;
  return {ok, fmt::format("attention row-sum err {:.1e}, M time-sum err {:.1e}, M channel spread {:.1e}, "
                          "F_e - Z_v(1+M) {:.1e}, neg-Pearson range [{:.3f}, {:.3f}], affine err {:.1e}",
                          att, msum, mchan, fe, lo, hi, affine)};
}

Outcome shape_contract() {
  const model::BackboneConfig full = model::BackboneConfig::paper_shape();
  const Dim3 ext = full.output_extent({64, 224, 224});
  // Full geometry with every width cut to 8 channels keeps the forward pass
  // within desk memory.
  model::BackboneConfig narrow = full;
  narrow.stem_channels = 8;
  for (auto& s : narrow.stages) s.width = 8, s.blocks = 1;
  Rng rng(1);
  Tensor video = rng.uniform_tensor({1, 1, 64, 224, 224}, 0.0, 1.0);
  model::Stan stan = model::Stan::create(narrow, 2, rng);
  model::DeepRppg rppg = model::DeepRppg::create(narrow, rng);
  Tape tape;
  nn::Context ctx{tape};
  model::Trace st, rt;
  stan.forward(ctx, tape.constant(video), &st);
  const Var sig = rppg.forward(ctx, tape.constant(video), &rt);
  const Shape att = st.attention.shape(), len = sig.shape();
  const std::size_t flat = model::Cnn1d::flatten_length(64);
  model::Cnn1d cnn = model::Cnn1d::create(64, 2, rng);
  const bool ok = ext == Dim3{16, 7, 7} && att == Shape{1, 784, 784} && len == Shape{1, 64} && flat == 512 &&
                  cnn.fc1.weight.value.dim(1) == 512 && model::Cnn1d::flatten_length(128) == 64 * 128 / 8;
  return {ok, fmt::format("attention stage (t,h,w) = ({},{},{}), STA map {}, rPPG signal {}, 1D-CNN flatten {} at T=64",
                          ext.t, ext.h, ext.w, to_string(att), to_string(len), flat)};
}

double best_metric(const MetricLog& log, const std::string& stage, const std::string& split, const std::string& metric,
                   int* at = nullptr) {
  double best = -INFINITY;
  for (const auto& r : log.rows())
    if (r.stage == stage && r.split == split && r.metric == metric && r.value > best) {
      best = r.value;
      if (at) *at = r.epoch;
    }
  return best;
}

Outcome rppg_recovery() {
  RunConfig c = base_config("c5-deep-rppg", ModelKind::kDeepRppg, 0);
  c.epochs_rppg = 40;
  const RunRecord r = train(c);
  int epoch = 0;
  const double best = best_metric(r.log, "rppg", "test", "pearson", &epoch);
  const double last = r.fold_results.at(0).metrics.at("pearson");
  return {best >= 0.8, fmt::format("held-out Pearson r best {:.3f} (epoch {}), final {:.3f}; need >= 0.8 within 40 epochs",
                                   best, epoch, last)};
}

Outcome enrichment_benefit() {
  std::map<ModelKind, std::vector<double>> acc;
  for (std::uint64_t seed : kSeeds)
    for (ModelKind k : {ModelKind::kStanNoAttention, ModelKind::kStan, ModelKind::kRstan}) {
      RunConfig c = base_config(fmt::format("c6-{}-s{}", model::to_string(k), seed), k, seed);
      c.epochs_rppg = 10;
      c.epochs_classifier = 10;
      c.epochs_joint = 5;
      acc[k].push_back(train(c).fold_results.at(0).metrics.at("accuracy"));
    }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  const double noatt = mean(acc[ModelKind::kStanNoAttention]), stan = mean(acc[ModelKind::kStan]),
               rstan = mean(acc[ModelKind::kRstan]);
  return {rstan >= stan && stan >= noatt,
          fmt::format("mean binary accuracy over 3 seeds: rSTAN {:.3f}, STAN {:.3f}, STAN w/o attention {:.3f}", rstan,
                      stan, noatt)};
}

Outcome input_structures() {
  std::map<std::string, std::vector<double>> acc;
  std::vector<StructureRow> all;
  for (std::uint64_t seed : kSeeds) {
    RunConfig c = base_config(fmt::format("c7-s{}", seed), ModelKind::kStan, seed);
    c.folds = 3;
    c.epochs_classifier = 5;
    c.save_checkpoints = false;
    for (const auto& r : compare_input_structures(c)) {
      acc[r.structure].push_back(r.accuracy);
      all.push_back(r);
    }
  }
  write_structure_csv(kWork / "input_structures.csv", all);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  const double down = mean(acc["downsampled"]), rnd = mean(acc["random64"]), multi = mean(acc["multisegment"]);
  return {down >= rnd, fmt::format("mean 3-fold accuracy over 3 seeds: downsampled {:.3f}, random64 {:.3f}, "
                                   "multisegment {:.3f}",
                                   down, rnd, multi)};
}

Outcome determinism() {
  RunConfig a = base_config("c8", ModelKind::kRstan, 5);
  a.epochs_rppg = a.epochs_classifier = a.epochs_joint = 1;
  a.output_dir = (kWork / "c8a").string();
  RunConfig b = a;
  b.output_dir = (kWork / "c8b").string();
  const RunRecord ra = train(a);
  train(b);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  const bool csv_same = slurp(a.run_dir() / "metrics.csv") == slurp(b.run_dir() / "metrics.csv");
  const bool ckpt_same = slurp(a.run_dir() / "fold0.ckpt") == slurp(b.run_dir() / "fold0.ckpt");

  // save -> load -> save reproduces the file byte for byte, and the reloaded
  // weights evaluate to the metrics recorded at the end of training.
  const Checkpoint loaded = load_checkpoint(a.run_dir() / "fold0.ckpt");
  model::Network net = model::Network::create(network_config(a, a.sampler.clip_length, a.generator.size));
  restore(net.registry(), loaded);
  save_checkpoint(kWork / "c8_resaved.ckpt", net.registry(), loaded.meta);
  const bool roundtrip = slurp(kWork / "c8_resaved.ckpt") == slurp(a.run_dir() / "fold0.ckpt");
  const EvalResult e = evaluate_checkpoint(a.run_dir() / "fold0.ckpt", open_dataset(a), Protocol::kHoldout);
  const bool metrics_same = e.metrics == ra.fold_results.at(0).metrics;
  return {csv_same && ckpt_same && roundtrip && metrics_same,
          fmt::format("rerun metric CSV identical: {}, checkpoints identical: {}, save/load/save byte-exact: {}, "
                      "reloaded eval metrics bit-identical: {}",
                      csv_same, ckpt_same, roundtrip, metrics_same)};
}

Outcome classifier_sanity() {
  RunConfig c = base_config("c9-cnn1d", ModelKind::kCnn1d, 0);
  c.epochs_classifier = 50;
  c.eval_train_set = true;
  const RunRecord r = train(c);
  int epoch = 0;
  const double train_acc = best_metric(r.log, "classifier", "train", "accuracy", &epoch);

  // Untrained models on all 200 binary videos (balanced T0 / T4).
  RunConfig h = base_config("c9-chance", ModelKind::kStan, 0);
  const data::Dataset data = open_dataset(h);
  const auto samples = task_samples(data, Task::kBinary);
  const ClipSet set = build_clips(data, samples, Task::kBinary, h.sampler, 3);
  std::string chance;
  bool chance_ok = true;
  for (ModelKind k : {ModelKind::kStan, ModelKind::kRstan, ModelKind::kCnn1d}) {
    h.model = k;
    model::Network net = model::Network::create(network_config(h, set.length, set.height));
    const double acc = evaluate(net, set, Task::kBinary, 8).metrics.at("accuracy");
    chance_ok = chance_ok && std::abs(acc - 0.5) <= 0.1;
    chance += fmt::format(", {} {:.3f}", model::to_string(k), acc);
  }
  return {train_acc >= 0.9 && chance_ok,
          fmt::format("cnn1d train accuracy {:.3f} (epoch {}, need >= 0.9 within 50); random-weight accuracy on {} "
                      "balanced clips{} (need 0.5 +/- 0.1)",
                      train_acc, epoch, set.clips.size(), chance)};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  fs::create_directories(kWork);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},   {"oracle equivalence", oracle_equivalence},
      {"equation invariants", equation_invariants}, {"paper-shape contract", shape_contract},
      {"synthetic rPPG recovery", rppg_recovery}, {"enrichment benefit", enrichment_benefit},
      {"input-structure ordering", input_structures}, {"determinism", determinism},
      {"classifier sanity", classifier_sanity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::printf("C%d %s %s: %s [%.0f s]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
