#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rstan/model/attention.hpp"
#include "rstan/nn/layers.hpp"

namespace rstan::model {

using nn::Dim3;
using nn::PoolSpec;

struct StageConfig {
  std::size_t width = 8;
  std::size_t blocks = 1;
  std::optional<PoolSpec> pool;  // applied after the blocks
};

// I3D-style backbone: Unit3D stem, optional stem pool, then stages of
// inception blocks. STA (when enabled) follows stage `attention_stage`.
struct BackboneConfig {
  std::string preset = "toy";
  std::size_t in_channels = 1;
  std::size_t stem_channels = 8;
  Dim3 stem_kernel{3, 3, 3};
  Dim3 stem_stride{1, 2, 2};
  Dim3 stem_padding{1, 1, 1};
  std::optional<PoolSpec> stem_pool;
  std::vector<StageConfig> stages;
  std::size_t attention_stage = 0;
  std::size_t sta_embed = 0;  // 0: half the stage width
  bool sta_residual = true;

  // 16x28x28 grayscale input; widths 8/16/32; z_v is (32, T/4, 4, 4).
  static BackboneConfig toy();
  // 64x224x224 input reaching (16, 7, 7) at the attention stage.
  static BackboneConfig paper_shape();
  static BackboneConfig from_preset(const std::string& name);

  std::size_t temporal_factor() const;
  std::size_t out_channels() const { return stages.empty() ? stem_channels : stages.back().width; }
  // (t, h, w) at the backbone output for a given input extent.
  Dim3 output_extent(Dim3 input) const;
  void validate() const;
};

// Per-forward intermediate maps exposed for tests and for fusion.
struct Trace {
  Var z_v;        // visual features at the backbone output
  Var attention;  // STA map (N, n, n) when present
  Var x_r;        // rPPG encoder tap
  Var m;          // VFE attention map
  Var f_e;        // enriched features
};

struct Backbone {
  static Backbone create(const BackboneConfig& cfg, Rng& rng, bool with_attention);

  Var forward(nn::Context& ctx, Var x, Trace* trace = nullptr);
  void visit(ParamRegistry& reg, const std::string& prefix);

  BackboneConfig cfg;
  nn::Unit3d stem;
  std::vector<std::vector<nn::InceptionBlock>> stages;
  std::optional<StaParams> sta;
};

void check_frame_count(const BackboneConfig& cfg, std::size_t frames);

struct Stan {
  static Stan create(const BackboneConfig& cfg, std::size_t num_classes, Rng& rng, bool attention = true);

  // Returns logits (N, classes); z_v and the attention map go to the trace.
  Var forward(nn::Context& ctx, Var video, Trace* trace = nullptr);
  Var classify(nn::Context& ctx, Var features);
  void visit(ParamRegistry& reg, const std::string& prefix);

  Backbone backbone;
  nn::Linear head;
};

// Doubles the temporal length: replicate-pad one frame on each side, then a
// stride-2 temporal deconvolution, batch norm, ReLU.
//
// The deconvolution weight is the learned kernel convolved with [1, 1], so
// even and odd output phases see equal tap sums and a constant input decodes
// to a constant output.
struct DecoderUnit {
  static DecoderUnit create(std::size_t in_channels, std::size_t out_channels, Rng& rng,
                            std::size_t kernel_t = 4);

  Var forward(nn::Context& ctx, Var x);
  void visit(ParamRegistry& reg, const std::string& prefix);
  // The (Ci, Co, kt, 1, 1) deconvolution weight built from `kernel`.
  Var weight(Tape& tape);

  Parameter kernel;  // (Ci, Co, kt - 1, 1, 1)
  Parameter bias;
  nn::BatchNorm bn;
};

struct DeepRppg {
  static DeepRppg create(const BackboneConfig& cfg, Rng& rng);

  // Returns the predicted signal (N, T); x_r goes to the trace.
  Var forward(nn::Context& ctx, Var video, Trace* trace = nullptr);
  void visit(ParamRegistry& reg, const std::string& prefix);

  Backbone encoder;
  PoolSpec tail_max{nn::PoolKind::kMax, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
  std::vector<DecoderUnit> decoder;
  nn::Conv3dParams projection;
};

// Table 5 physiological classifier over a 1-D signal (N, T).
struct Cnn1d {
  static Cnn1d create(std::size_t frames, std::size_t num_classes, Rng& rng, std::size_t channels = 64,
                      std::size_t hidden = 128, double dropout = 0.5);

  Var forward(nn::Context& ctx, Var signal);
  void visit(ParamRegistry& reg, const std::string& prefix);
  static std::size_t flatten_length(std::size_t frames, std::size_t channels = 64);

  std::vector<nn::Unit3d> convs;  // Conv_1..Conv_7
  nn::Linear fc1, fc2;
  double dropout = 0.5;
};

enum class ModelKind {
  kStan,
  kStanNoAttention,
  kRstan,
  kDeepRppg,
  kCnn1d,
  kEarlyFusionFlatten,
  kEarlyFusionConcat,
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
bool uses_video(ModelKind kind);
bool has_rppg_branch(ModelKind kind);
bool has_classifier(ModelKind kind);

struct NetworkConfig {
  ModelKind kind = ModelKind::kRstan;
  BackboneConfig backbone = BackboneConfig::toy();
  std::size_t num_classes = 2;
  std::size_t frames = 16;        // T of the (video or signal) input
  std::size_t frame_size = 28;    // H = W of the video input
  std::uint64_t seed = 0;
};

struct NetworkOutput {
  Var logits;  // (N, classes) for classifying models
  Var rppg;    // (N, T) for models with an rPPG branch
  Trace trace;
};

// Every model variant behind one interface. Branch parameters are drawn
// from seed-derived streams keyed by branch, so variants built with the same
// seed share their STAN and Deep-rPPG initialisations.
class Network {
 public:
  static Network create(const NetworkConfig& cfg);

  NetworkOutput forward(nn::Context& ctx, Var input);
  // Names follow <branch>.<stage>.<layer>.<param>.
  void visit(ParamRegistry& reg);
  ParamRegistry registry();
  std::size_t parameter_count();

  const NetworkConfig& config() const { return cfg_; }

  std::optional<Stan> stan;
  std::optional<DeepRppg> rppg;
  std::optional<VfeParams> vfe;
  std::optional<nn::Linear> fusion_head;
  std::optional<Cnn1d> cnn1d;

 private:
  NetworkConfig cfg_;
};

}  // namespace rstan::model
