#include "rstan/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rstan/core/errors.hpp"
#include "rstan/core/ops.hpp"

namespace rstan::nn {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return rng.uniform_tensor(std::move(shape), -bound, bound);
}

Conv3dParams Conv3dParams::create(std::size_t in_channels, std::size_t out_channels, Dim3 kernel,
                                  Dim3 stride, Dim3 padding, Rng& rng, bool bias) {
  Conv3dParams p;
  const std::size_t fan_in = in_channels * kernel.t * kernel.h * kernel.w;
  p.weight = Parameter(he_uniform({out_channels, in_channels, kernel.t, kernel.h, kernel.w}, fan_in, rng));
  p.bias = Parameter(Tensor(Shape{out_channels}));
  p.has_bias = bias;
  p.stride = stride;
  p.padding = padding;
  return p;
}

Dim3 Conv3dParams::kernel() const {
  const Shape& s = weight.value.shape();
  return {s[2], s[3], s[4]};
}

Var Conv3dParams::forward(Context& ctx, Var x) {
  Dim3 pad = padding;
  if (replicate_time && pad.t > 0) {
    x = pad_time_replicate(x, pad.t, pad.t);
    pad.t = 0;
  }
  Var w = ctx.tape.param(weight);
  std::optional<Var> b;
  if (has_bias) b = ctx.tape.param(bias);
  return conv3d(x, w, b, stride, pad);
}

void Conv3dParams::visit(ParamRegistry& reg, const std::string& prefix) {
  reg.add_param(prefix + ".weight", weight);
  if (has_bias) reg.add_param(prefix + ".bias", bias);
}

BatchNorm BatchNorm::create(std::size_t channels) {
  BatchNorm bn;
  bn.gamma = Parameter(Tensor(Shape{channels}, 1.0));
  bn.beta = Parameter(Tensor(Shape{channels}, 0.0));
  bn.state.running_mean = Tensor(Shape{channels}, 0.0);
  bn.state.running_var = Tensor(Shape{channels}, 1.0);
  return bn;
}

Var BatchNorm::forward(Context& ctx, Var x) {
  return batch_norm(x, ctx.tape.param(gamma), ctx.tape.param(beta), state, ctx.mode, momentum, eps);
}

void BatchNorm::visit(ParamRegistry& reg, const std::string& prefix) {
  reg.add_param(prefix + ".gamma", gamma);
  reg.add_param(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", state.running_mean);
  reg.add_buffer(prefix + ".running_var", state.running_var);
}

Unit3d Unit3d::create(std::size_t in_channels, std::size_t out_channels, Dim3 kernel, Dim3 stride,
                      Dim3 padding, Rng& rng, bool replicate_time) {
  Unit3d u;
  u.conv = Conv3dParams::create(in_channels, out_channels, kernel, stride, padding, rng, false);
  u.conv.replicate_time = replicate_time;
  u.bn = BatchNorm::create(out_channels);
  return u;
}

Var Unit3d::forward(Context& ctx, Var x) { return relu(bn.forward(ctx, conv.forward(ctx, x))); }

void Unit3d::visit(ParamRegistry& reg, const std::string& prefix) {
  conv.visit(reg, prefix + ".conv");
  bn.visit(reg, prefix + ".bn");
}

Linear Linear::create(std::size_t in_features, std::size_t out_features, Rng& rng) {
  Linear l;
  l.weight = Parameter(he_uniform({out_features, in_features}, in_features, rng));
  l.bias = Parameter(Tensor(Shape{out_features}));
  return l;
}

Var Linear::forward(Context& ctx, Var x) {
  return linear(x, ctx.tape.param(weight), ctx.tape.param(bias));
}

void Linear::visit(ParamRegistry& reg, const std::string& prefix) {
  reg.add_param(prefix + ".weight", weight);
  reg.add_param(prefix + ".bias", bias);
}

void Linear::zero() {
  weight.value.fill(0.0);
  bias.value.fill(0.0);
}

InceptionWidths InceptionWidths::split(std::size_t out_channels) {
  if (out_channels < 4) throw ConfigError("inception block needs at least 4 output channels");
  InceptionWidths w;
  w.b0 = std::max<std::size_t>(1, out_channels / 4);
  w.b1 = std::max<std::size_t>(1, out_channels / 2);
  w.b2 = std::max<std::size_t>(1, out_channels / 8);
  w.b3 = out_channels - w.b0 - w.b1 - w.b2;
  if (w.b3 == 0) {
    w.b3 = 1;
    --w.b1;
  }
  w.b1_reduce = std::max<std::size_t>(1, w.b1 / 2);
  w.b2_reduce = std::max<std::size_t>(1, w.b2 / 2);
  return w;
}

InceptionBlock InceptionBlock::create(std::size_t in_channels, const InceptionWidths& widths, Rng& rng) {
  InceptionBlock b;
  b.widths = widths;
  const Dim3 one{1, 1, 1}, three{3, 3, 3}, none{0, 0, 0};
  b.b0 = Unit3d::create(in_channels, widths.b0, one, one, none, rng);
  b.b1a = Unit3d::create(in_channels, widths.b1_reduce, one, one, none, rng);
  b.b1b = Unit3d::create(widths.b1_reduce, widths.b1, three, one, one, rng);
  b.b2a = Unit3d::create(in_channels, widths.b2_reduce, one, one, none, rng);
  b.b2b = Unit3d::create(widths.b2_reduce, widths.b2, three, one, one, rng);
  b.b3 = Unit3d::create(in_channels, widths.b3, one, one, none, rng);
  return b;
}

Var InceptionBlock::forward(Context& ctx, Var x) {
  const std::vector<Var> parts{
      b0.forward(ctx, x),
      b1b.forward(ctx, b1a.forward(ctx, x)),
      b2b.forward(ctx, b2a.forward(ctx, x)),
      b3.forward(ctx, pool.apply(x)),
  };
  return concat(parts, 1);
}

void InceptionBlock::visit(ParamRegistry& reg, const std::string& prefix) {
  b0.visit(reg, prefix + ".branch0");
  b1a.visit(reg, prefix + ".branch1a");
  b1b.visit(reg, prefix + ".branch1b");
  b2a.visit(reg, prefix + ".branch2a");
  b2b.visit(reg, prefix + ".branch2b");
  b3.visit(reg, prefix + ".branch3");
}

}  // namespace rstan::nn
