#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "rstan/core/errors.hpp"
#include "rstan/harness/config.hpp"
#include "rstan/harness/experiments.hpp"
#include "rstan/harness/gradcheck_suite.hpp"
#include "rstan/harness/plot.hpp"
#include "rstan/harness/trainer.hpp"

namespace fs = std::filesystem;
using namespace rstan;
using namespace rstan::harness;
using nlohmann::json;

namespace {

struct GenArgs {
  std::string out;
  std::string config;
  std::string profile = "A";
  std::optional<std::size_t> subjects, clips, frames, size;
  std::optional<std::uint64_t> seed;
};

data::GeneratorConfig generator_from(const GenArgs& a) {
  data::GeneratorConfig g = data::GeneratorConfig::from_profile(a.profile);
  if (!a.config.empty()) {
    std::ifstream is(a.config);
    if (!is) throw ConfigError("cannot open " + a.config);
    try {
      g = json::parse(is).get<data::GeneratorConfig>();
    } catch (const json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
  }
  if (a.subjects) g.subjects = *a.subjects;
  if (a.clips) g.clips_per_subject = *a.clips;
  if (a.frames) g.frames = *a.frames;
  if (a.size) g.size = *a.size;
  if (a.seed) g.seed = *a.seed;
  g.validate();
  return g;
}

struct TrainArgs {
  std::string config;
  std::optional<std::string> run_id, model, task, protocol, manifest, output_dir, sampler, preset;
  std::optional<std::size_t> epochs_rppg, epochs_classifier, epochs_joint, folds, batch_size;
  std::optional<double> lr, lambda;
  std::optional<std::uint64_t> seed;
  bool eval_train = false;
};

RunConfig run_config_from(const TrainArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.run_id) c.run_id = *a.run_id;
  if (a.model) c.model = model::parse_model_kind(*a.model);
  if (a.task) c.task = parse_task(*a.task);
  if (a.protocol) c.protocol = parse_protocol(*a.protocol);
  if (a.manifest) c.manifest = *a.manifest;
  if (a.output_dir) c.output_dir = *a.output_dir;
  if (a.sampler) c.sampler.mode = data::parse_sampler_mode(*a.sampler);
  if (a.preset) c.preset = *a.preset;
  if (a.epochs_rppg) c.epochs_rppg = *a.epochs_rppg;
  if (a.epochs_classifier) c.epochs_classifier = *a.epochs_classifier;
  if (a.epochs_joint) c.epochs_joint = *a.epochs_joint;
  if (a.folds) c.folds = *a.folds;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.lr) c.learning_rate = *a.lr;
  if (a.lambda) c.lambda_rppg = *a.lambda;
  if (a.seed) c.seed = *a.seed;
  if (a.eval_train) c.eval_train_set = true;
  c.validate();
  return c;
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("-c,--config", a.config, "Run config JSON");
  cmd->add_option("--run-id", a.run_id);
  cmd->add_option("--model", a.model, "stan | stan-noatt | rstan | deep-rppg | cnn1d | early-fusion-flatten | early-fusion-concat");
  cmd->add_option("--task", a.task, "binary | five-class");
  cmd->add_option("--protocol", a.protocol, "holdout | loso | kfold | cross-distribution");
  cmd->add_option("--manifest", a.manifest, "Dataset manifest; omitted renders the configured generator");
  cmd->add_option("--output-dir", a.output_dir);
  cmd->add_option("--sampler", a.sampler, "downsampled | random64 | multisegment");
  cmd->add_option("--preset", a.preset, "toy | paper");
  cmd->add_option("--epochs-rppg", a.epochs_rppg);
  cmd->add_option("--epochs-classifier", a.epochs_classifier);
  cmd->add_option("--epochs-joint", a.epochs_joint);
  cmd->add_option("--folds", a.folds);
  cmd->add_option("--batch-size", a.batch_size);
  cmd->add_option("--lr", a.lr);
  cmd->add_option("--lambda-rppg", a.lambda);
  cmd->add_option("--seed", a.seed);
  cmd->add_flag("--eval-train", a.eval_train, "Score the training clips in eval mode every epoch");
}

void print_metrics(const std::string& label, const EvalResult& r) {
  std::cout << label;
  for (const auto& [k, v] : r.metrics) std::cout << ' ' << k << '=' << format_value(v);
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rstan: synthetic pain-recognition experiments with rPPG-enriched spatio-temporal attention"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic dataset to disk");
  gen_cmd->add_option("-o,--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("-c,--config", gen.config, "Generator config JSON");
  gen_cmd->add_option("--profile", gen.profile, "A | B");
  gen_cmd->add_option("--subjects", gen.subjects);
  gen_cmd->add_option("--clips-per-subject", gen.clips);
  gen_cmd->add_option("--frames", gen.frames);
  gen_cmd->add_option("--size", gen.size);
  gen_cmd->add_option("--seed", gen.seed);

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Staged training under a protocol");
  add_train_options(train_cmd, tr);
  bool dump_config = false;
  train_cmd->add_flag("--print-config", dump_config, "Print the resolved config and exit");

  std::string ckpt, eval_manifest, eval_protocol = "holdout", eval_profile, eval_out;
  std::size_t eval_batch = 8;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest");
  eval_cmd->add_option("--profile", eval_profile, "Render a default generator profile instead of a manifest");
  eval_cmd->add_option("--protocol", eval_protocol, "holdout | loso | kfold | cross-distribution");
  eval_cmd->add_option("--batch-size", eval_batch);
  eval_cmd->add_option("--scores", eval_out, "Write per-clip labels, predictions and scores as CSV");

  std::size_t instances = 20;
  double tolerance = 1e-4;
  std::uint64_t gc_seed = 0;
  std::string gc_out, gc_only;
  bool negative = false;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc_cmd->add_option("--instances", instances);
  gc_cmd->add_option("--tolerance", tolerance);
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--only", gc_only, "Run a single op");
  gc_cmd->add_option("-o,--out", gc_out, "Report CSV");
  gc_cmd->add_flag("--negative-control", negative, "Append a deliberately broken op");

  TrainArgs cmp;
  std::string cmp_out;
  CLI::App* cmp_cmd = app.add_subcommand("compare-inputs", "STAN under each input structure on k folds");
  add_train_options(cmp_cmd, cmp);
  cmp_cmd->add_option("-o,--out", cmp_out, "Table CSV");

  std::string plot_in, plot_out;
  CLI::App* plot_cmd = app.add_subcommand("plot", "Render a metric CSV to SVG charts");
  plot_cmd->add_option("--metrics", plot_in)->required();
  plot_cmd->add_option("-o,--out", plot_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*gen_cmd) {
      const data::GeneratorConfig g = generator_from(gen);
      data::Dataset::synthetic(g).save(gen.out);
      std::cout << (fs::path(gen.out) / "manifest.json").string() << '\n';
    } else if (*train_cmd) {
      const RunConfig c = run_config_from(tr);
      if (dump_config) {
        std::cout << json(c).dump(2) << '\n';
        return 0;
      }
      const RunRecord rec = train(c);
      for (std::size_t k = 0; k < rec.fold_results.size(); ++k) print_metrics("fold " + std::to_string(k), rec.fold_results[k]);
      for (std::size_t k = 0; k < rec.cross_results.size(); ++k)
        print_metrics("cross fold " + std::to_string(k), rec.cross_results[k]);
      if (c.save_checkpoints) std::cout << "run directory " << c.run_dir().string() << '\n';
    } else if (*eval_cmd) {
      if (eval_manifest.empty() == eval_profile.empty()) throw ConfigError("eval needs exactly one of --manifest and --profile");
      const data::Dataset ds = eval_manifest.empty()
                                   ? data::Dataset::synthetic(data::GeneratorConfig::from_profile(eval_profile))
                                   : data::Dataset::open(eval_manifest);
      const EvalResult r = evaluate_checkpoint(ckpt, ds, parse_protocol(eval_protocol), eval_batch);
      print_metrics(eval_protocol, r);
      if (!eval_out.empty()) {
        std::ofstream os(eval_out);
        os << "clip,label,prediction,score\n";
        for (std::size_t i = 0; i < r.labels.size(); ++i)
          os << i << ',' << r.labels[i] << ',' << r.predictions[i] << ','
             << (i < r.scores.size() ? format_value(r.scores[i]) : "") << '\n';
        if (!os) throw ContractError("cannot write " + eval_out);
      }
    } else if (*gc_cmd) {
      std::vector<GradCheckCase> cases = default_gradcheck_cases();
      if (negative) cases.push_back(negative_control_case());
      if (!gc_only.empty()) {
        std::erase_if(cases, [&](const GradCheckCase& c) { return c.op != gc_only; });
        if (cases.empty()) throw ConfigError("no gradcheck case named '" + gc_only + "'");
      }
      const GradCheckReport report = run_gradcheck_suite(cases, instances, tolerance, gc_seed);
      if (!gc_out.empty()) write_gradcheck_csv(gc_out, report);
      std::cout << report.entries.size() << " instances, " << report.failures() << " failures\n";
      for (const auto& e : report.entries)
        if (!e.pass) std::cout << "FAIL " << e.op << " seed " << e.seed << " error " << e.error << '\n';
      return report.all_passed() ? 0 : 2;
    } else if (*cmp_cmd) {
      const RunConfig c = run_config_from(cmp);
      const auto rows = compare_input_structures(c);
      if (!cmp_out.empty()) write_structure_csv(cmp_out, rows);
      for (const auto& r : rows)
        std::cout << r.structure << " fold " << r.fold << " seed " << r.seed << " accuracy " << format_value(r.accuracy)
                  << '\n';
    } else if (*plot_cmd) {
      for (const auto& p : plot_metrics(MetricLog::read_csv(plot_in), plot_out)) std::cout << p.string() << '\n';
    }
  } catch (const NumericError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
