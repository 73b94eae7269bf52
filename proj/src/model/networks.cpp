#include "rstan/model/networks.hpp"

#include <algorithm>

#include "rstan/core/errors.hpp"
#include "rstan/core/ops.hpp"

namespace rstan::model {

using nn::PoolKind;
using rstan::to_string;

namespace {

PoolSpec max_pool(Dim3 k, Dim3 s, Dim3 p) { return {PoolKind::kMax, k, s, p}; }

bool is_power_of_two(std::size_t v) { return v && !(v & (v - 1)); }

}  // namespace

BackboneConfig BackboneConfig::toy() {
  BackboneConfig c;
  c.preset = "toy";
  c.stem_channels = 8;
  c.stem_kernel = {3, 3, 3};
  c.stem_stride = {1, 2, 2};
  c.stem_padding = {1, 1, 1};
  c.stages = {
      {8, 1, max_pool({3, 3, 3}, {2, 2, 2}, {1, 1, 1})},
      {16, 1, max_pool({3, 3, 3}, {2, 2, 2}, {1, 1, 1})},
      {32, 1, std::nullopt},
  };
  c.attention_stage = 2;
  return c;
}

BackboneConfig BackboneConfig::paper_shape() {
  BackboneConfig c;
  c.preset = "paper";
  c.stem_channels = 64;
  c.stem_kernel = {7, 7, 7};
  c.stem_stride = {2, 2, 2};
  c.stem_padding = {3, 3, 3};
  c.stem_pool = max_pool({1, 3, 3}, {1, 2, 2}, {0, 1, 1});
  c.stages = {
      {192, 1, max_pool({1, 3, 3}, {1, 2, 2}, {0, 1, 1})},
      {480, 2, max_pool({3, 3, 3}, {2, 2, 2}, {1, 1, 1})},
      {832, 5, max_pool({3, 3, 3}, {1, 2, 2}, {1, 1, 1})},
      {1024, 2, std::nullopt},
  };
  c.attention_stage = 3;
  return c;
}

BackboneConfig BackboneConfig::from_preset(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper_shape();
  throw ConfigError("unknown backbone preset '" + name + "' (expected toy or paper)");
}

std::size_t BackboneConfig::temporal_factor() const {
  std::size_t f = stem_stride.t;
  if (stem_pool) f *= stem_pool->stride.t;
  for (const StageConfig& s : stages)
    if (s.pool) f *= s.pool->stride.t;
  return f;
}

Dim3 BackboneConfig::output_extent(Dim3 in) const {
  auto apply = [](Dim3 d, Dim3 k, Dim3 s, Dim3 p) {
    return Dim3{nn::conv_out_extent(d.t, k.t, s.t, p.t, "backbone t"),
                nn::conv_out_extent(d.h, k.h, s.h, p.h, "backbone h"),
                nn::conv_out_extent(d.w, k.w, s.w, p.w, "backbone w")};
  };
  Dim3 d = apply(in, stem_kernel, stem_stride, stem_padding);
  if (stem_pool) d = apply(d, stem_pool->kernel, stem_pool->stride, stem_pool->padding);
  for (const StageConfig& s : stages)
    if (s.pool) d = apply(d, s.pool->kernel, s.pool->stride, s.pool->padding);
  return d;
}

void BackboneConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0) throw ConfigError("backbone channel counts must be positive");
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  if (attention_stage >= stages.size())
    throw ConfigError("attention_stage " + std::to_string(attention_stage) + " out of range for " +
                      std::to_string(stages.size()) + " stages");
  for (const StageConfig& s : stages) {
    if (s.width < 4) throw ConfigError("stage width must be at least 4");
    if (s.blocks == 0) throw ConfigError("stage needs at least one inception block");
  }
}

void check_frame_count(const BackboneConfig& cfg, std::size_t frames) {
  const std::size_t f = cfg.temporal_factor();
  if (frames == 0 || frames % f != 0)
    throw ConfigError("input of " + std::to_string(frames) + " frames is not divisible by the backbone's "
                      "temporal downsampling factor " + std::to_string(f));
}

Backbone Backbone::create(const BackboneConfig& cfg, Rng& rng, bool with_attention) {
  cfg.validate();
  Backbone b;
  b.cfg = cfg;
  // Drawn unconditionally so that the remaining weights do not depend on
  // whether attention is enabled.
  Rng sta_rng(rng.next());
  b.stem = nn::Unit3d::create(cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride,
                              cfg.stem_padding, rng);
  std::size_t c = cfg.stem_channels;
  for (const StageConfig& s : cfg.stages) {
    std::vector<nn::InceptionBlock> blocks;
    for (std::size_t i = 0; i < s.blocks; ++i) {
      blocks.push_back(nn::InceptionBlock::create(c, nn::InceptionWidths::split(s.width), rng));
      c = s.width;
    }
    b.stages.push_back(std::move(blocks));
  }
  if (with_attention) {
    b.sta = StaParams::create(cfg.stages[cfg.attention_stage].width, sta_rng, cfg.sta_embed);
    b.sta->residual = cfg.sta_residual;
  }
  return b;
}

Var Backbone::forward(nn::Context& ctx, Var x, Trace* trace) {
  if (x.shape().size() != 5 || x.shape()[1] != cfg.in_channels)
    throw DimensionError("backbone expects (N, " + std::to_string(cfg.in_channels) + ", T, H, W), got " +
                         to_string(x.shape()));
  x = stem.forward(ctx, x);
  if (cfg.stem_pool) x = cfg.stem_pool->apply(x);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (nn::InceptionBlock& block : stages[s]) x = block.forward(ctx, x);
    if (sta && s == cfg.attention_stage) {
      StaResult r = sta_forward(ctx, *sta, x);
      x = r.out;
      if (trace) trace->attention = r.attention;
    }
    if (cfg.stages[s].pool) x = cfg.stages[s].pool->apply(x);
  }
  return x;
}

void Backbone::visit(ParamRegistry& reg, const std::string& prefix) {
  stem.visit(reg, prefix + ".stem.unit");
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (std::size_t i = 0; i < stages[s].size(); ++i)
      stages[s][i].visit(reg, prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(i));
  if (sta) sta->visit(reg, prefix + ".sta");
}

Stan Stan::create(const BackboneConfig& cfg, std::size_t num_classes, Rng& rng, bool attention) {
  if (num_classes < 2) throw ConfigError("classifier needs at least two classes");
  Stan s;
  s.backbone = Backbone::create(cfg, rng, attention);
  s.head = nn::Linear::create(cfg.out_channels(), num_classes, rng);
  return s;
}

Var Stan::forward(nn::Context& ctx, Var video, Trace* trace) {
  check_frame_count(backbone.cfg, video.shape().size() > 2 ? video.shape()[2] : 0);
  Var z = backbone.forward(ctx, video, trace);
  if (trace) trace->z_v = z;
  return classify(ctx, z);
}

Var Stan::classify(nn::Context& ctx, Var features) {
  return head.forward(ctx, nn::global_avg_pool(features));
}

void Stan::visit(ParamRegistry& reg, const std::string& prefix) {
  backbone.visit(reg, prefix);
  head.visit(reg, prefix + ".head.linear");
}

DecoderUnit DecoderUnit::create(std::size_t in_channels, std::size_t out_channels, Rng& rng,
                                std::size_t kernel_t) {
  if (kernel_t < 2 || kernel_t % 2 != 0)
    throw ConfigError("decoder kernel must be even and at least 2, got " + std::to_string(kernel_t));
  DecoderUnit u;
  u.kernel = Parameter(nn::he_uniform({in_channels, out_channels, kernel_t - 1, 1, 1}, in_channels * kernel_t, rng));
  u.bias = Parameter(Tensor(Shape{out_channels}));
  u.bn = nn::BatchNorm::create(out_channels);
  return u;
}

Var DecoderUnit::weight(Tape& tape) {
  Var v = tape.param(kernel);
  Shape edge = kernel.value.shape();
  edge[2] = 1;
  Var zero = tape.constant(Tensor(edge));
  const std::vector<Var> lead{v, zero}, lag{zero, v};
  return add(concat(lead, 2), concat(lag, 2));
}

Var DecoderUnit::forward(nn::Context& ctx, Var x) {
  // Replicate padding by one frame followed by padding p + s = 3 crops the
  // same 2t outputs as a zero-padded (k=4, s=2, p=1) deconvolution.
  const std::size_t kt = kernel.value.dim(2) + 1;
  Var padded = nn::pad_time_replicate(x, 1, 1);
  Var y = nn::deconv3d_temporal(padded, weight(ctx.tape), ctx.tape.param(bias), (kt - 2) / 2 + 2);
  return relu(bn.forward(ctx, y));
}

void DecoderUnit::visit(ParamRegistry& reg, const std::string& prefix) {
  reg.add_param(prefix + ".deconv.kernel", kernel);
  reg.add_param(prefix + ".deconv.bias", bias);
  bn.visit(reg, prefix + ".bn");
}

DeepRppg DeepRppg::create(const BackboneConfig& cfg, Rng& rng) {
  DeepRppg d;
  d.encoder = Backbone::create(cfg, rng, false);
  const std::size_t factor = cfg.temporal_factor();
  if (!is_power_of_two(factor))
    throw ConfigError("temporal decoder doubles length per unit; downsampling factor " + std::to_string(factor) +
                      " is not a power of two");
  std::size_t c = cfg.out_channels();
  for (std::size_t f = factor; f > 1; f /= 2) {
    const std::size_t next = std::max<std::size_t>(1, c / 2);
    d.decoder.push_back(DecoderUnit::create(c, next, rng));
    c = next;
  }
  d.projection = nn::Conv3dParams::create(c, 1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng, true);
  return d;
}

Var DeepRppg::forward(nn::Context& ctx, Var video, Trace* trace) {
  const std::size_t frames = video.shape().size() > 2 ? video.shape()[2] : 0;
  check_frame_count(encoder.cfg, frames);
  Var x = encoder.forward(ctx, video);
  if (trace) trace->x_r = x;
  x = tail_max.apply(x);
  const Shape& s = x.shape();
  x = nn::pool3d(x, PoolKind::kAvg, {1, s[3], s[4]}, {1, 1, 1});
  for (DecoderUnit& u : decoder) x = u.forward(ctx, x);
  x = projection.forward(ctx, x);
  if (x.shape()[2] != frames)
    throw ConfigError("temporal decoder reached length " + std::to_string(x.shape()[2]) + ", required " +
                      std::to_string(frames));
  return reshape(x, {x.shape()[0], frames});
}

void DeepRppg::visit(ParamRegistry& reg, const std::string& prefix) {
  encoder.visit(reg, prefix);
  for (std::size_t i = 0; i < decoder.size(); ++i)
    decoder[i].visit(reg, prefix + ".decoder.unit" + std::to_string(i));
  projection.visit(reg, prefix + ".head.projection");
}

Cnn1d Cnn1d::create(std::size_t frames, std::size_t num_classes, Rng& rng, std::size_t channels,
                    std::size_t hidden, double dropout) {
  Cnn1d m;
  m.dropout = dropout;
  m.convs.push_back(nn::Unit3d::create(1, channels, {5, 1, 1}, {1, 1, 1}, {2, 0, 0}, rng, false));
  for (int i = 0; i < 6; ++i)
    m.convs.push_back(nn::Unit3d::create(channels, channels, {3, 1, 1}, {1, 1, 1}, {1, 0, 0}, rng, false));
  m.fc1 = nn::Linear::create(flatten_length(frames, channels), hidden, rng);
  m.fc2 = nn::Linear::create(hidden, num_classes, rng);
  return m;
}

std::size_t Cnn1d::flatten_length(std::size_t frames, std::size_t channels) {
  if (frames == 0 || frames % 8 != 0)
    throw ContractError("1D-CNN input length " + std::to_string(frames) + " is not divisible by 8");
  return channels * frames / 8;
}

Var Cnn1d::forward(nn::Context& ctx, Var signal) {
  if (signal.shape().size() != 2) throw DimensionError("1D-CNN expects (N, T), got " + to_string(signal.shape()));
  const std::size_t n = signal.shape()[0], t = signal.shape()[1];
  const std::size_t flat = flatten_length(t, convs.front().conv.out_channels());
  if (fc1.weight.value.dim(1) != flat)
    throw DimensionError("1D-CNN built for flatten length " + std::to_string(fc1.weight.value.dim(1)) +
                         ", input gives " + std::to_string(flat));
  const PoolSpec half{PoolKind::kMax, {2, 1, 1}, {2, 1, 1}, {0, 0, 0}};
  Var x = reshape(signal, {n, 1, t, 1, 1});
  for (std::size_t i = 0; i < convs.size(); ++i) {
    x = convs[i].forward(ctx, x);
    if (i == 0 || i == 2 || i == 4) x = half.apply(x);
  }
  x = nn::flatten(x);
  Rng fallback(0);
  Rng& rng = ctx.rng ? *ctx.rng : fallback;
  if (ctx.mode == nn::Mode::kTrain && !ctx.rng) throw ContractError("train-mode 1D-CNN needs a dropout rng");
  x = relu(fc1.forward(ctx, nn::dropout(x, dropout, ctx.mode, rng)));
  return fc2.forward(ctx, nn::dropout(x, dropout, ctx.mode, rng));
}

void Cnn1d::visit(ParamRegistry& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs.size(); ++i)
    convs[i].visit(reg, prefix + ".features.conv" + std::to_string(i + 1));
  fc1.visit(reg, prefix + ".classifier.fc1");
  fc2.visit(reg, prefix + ".classifier.fc2");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kStan: return "stan";
    case ModelKind::kStanNoAttention: return "stan-noatt";
    case ModelKind::kRstan: return "rstan";
    case ModelKind::kDeepRppg: return "deep-rppg";
    case ModelKind::kCnn1d: return "cnn1d";
    case ModelKind::kEarlyFusionFlatten: return "early-fusion-flatten";
    case ModelKind::kEarlyFusionConcat: return "early-fusion-concat";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  for (ModelKind k : {ModelKind::kStan, ModelKind::kStanNoAttention, ModelKind::kRstan, ModelKind::kDeepRppg,
                      ModelKind::kCnn1d, ModelKind::kEarlyFusionFlatten, ModelKind::kEarlyFusionConcat})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown model '" + name + "'");
}

bool uses_video(ModelKind kind) { return kind != ModelKind::kCnn1d; }

bool has_rppg_branch(ModelKind kind) {
  return kind == ModelKind::kRstan || kind == ModelKind::kDeepRppg || kind == ModelKind::kEarlyFusionFlatten ||
         kind == ModelKind::kEarlyFusionConcat;
}

bool has_classifier(ModelKind kind) { return kind != ModelKind::kDeepRppg; }

Network Network::create(const NetworkConfig& cfg) {
  Network net;
  net.cfg_ = cfg;
  const ModelKind k = cfg.kind;
  if (k == ModelKind::kCnn1d) {
    Rng rng(derive_seed(cfg.seed, 5));
    net.cnn1d = Cnn1d::create(cfg.frames, cfg.num_classes, rng);
    return net;
  }
  check_frame_count(cfg.backbone, cfg.frames);
  if (k != ModelKind::kDeepRppg) {
    Rng rng(derive_seed(cfg.seed, 1));
    net.stan = Stan::create(cfg.backbone, cfg.num_classes, rng, k != ModelKind::kStanNoAttention);
  }
  if (has_rppg_branch(k)) {
    Rng rng(derive_seed(cfg.seed, 2));
    net.rppg = DeepRppg::create(cfg.backbone, rng);
  }
  if (k == ModelKind::kRstan) {
    Rng rng(derive_seed(cfg.seed, 3));
    net.vfe = VfeParams::create(cfg.backbone.out_channels(), rng);
  }
  if (k == ModelKind::kEarlyFusionFlatten || k == ModelKind::kEarlyFusionConcat) {
    Rng rng(derive_seed(cfg.seed, 4));
    const std::size_t c = cfg.backbone.out_channels();
    std::size_t in = 2 * c;
    if (k == ModelKind::kEarlyFusionFlatten) {
      const Dim3 e = cfg.backbone.output_extent({cfg.frames, cfg.frame_size, cfg.frame_size});
      in = 2 * c * e.t * e.h * e.w;
    }
    net.fusion_head = nn::Linear::create(in, cfg.num_classes, rng);
  }
  return net;
}

NetworkOutput Network::forward(nn::Context& ctx, Var input) {
  NetworkOutput out;
  Trace& tr = out.trace;
  switch (cfg_.kind) {
    case ModelKind::kCnn1d:
      out.logits = cnn1d->forward(ctx, input);
      return out;
    case ModelKind::kStan:
    case ModelKind::kStanNoAttention:
      out.logits = stan->forward(ctx, input, &tr);
      return out;
    case ModelKind::kDeepRppg:
      out.rppg = rppg->forward(ctx, input, &tr);
      return out;
    default:
      break;
  }
  check_frame_count(cfg_.backbone, input.shape().size() > 2 ? input.shape()[2] : 0);
  tr.z_v = stan->backbone.forward(ctx, input, &tr);
  out.rppg = rppg->forward(ctx, input, &tr);
  if (cfg_.kind == ModelKind::kRstan) {
    VfeResult v = vfe_forward(ctx, *vfe, tr.x_r, tr.z_v);
    tr.m = v.m;
    tr.f_e = enrich(v.f, tr.z_v);
    out.logits = stan->classify(ctx, tr.f_e);
  } else if (cfg_.kind == ModelKind::kEarlyFusionFlatten) {
    const std::vector<Var> parts{nn::flatten(tr.z_v), nn::flatten(tr.x_r)};
    out.logits = fusion_head->forward(ctx, concat(parts, 1));
  } else {
    const std::vector<Var> parts{tr.z_v, tr.x_r};
    out.logits = fusion_head->forward(ctx, nn::global_avg_pool(concat(parts, 1)));
  }
  return out;
}

void Network::visit(ParamRegistry& reg) {
  if (stan) stan->visit(reg, "stan");
  if (rppg) rppg->visit(reg, "rppg");
  if (vfe) vfe->visit(reg, "vfe.block");
  if (fusion_head) fusion_head->visit(reg, "fusion.head.linear");
  if (cnn1d) cnn1d->visit(reg, "cnn1d");
}

ParamRegistry Network::registry() {
  ParamRegistry reg;
  visit(reg);
  return reg;
}

std::size_t Network::parameter_count() { return registry().parameter_count(); }

}  // namespace rstan::model
