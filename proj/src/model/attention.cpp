#include "rstan/model/attention.hpp"

#include <algorithm>
#include <vector>

#include "rstan/core/errors.hpp"
#include "rstan/core/ops.hpp"

namespace rstan::model {

namespace {

Conv3dParams pointwise(std::size_t in, std::size_t out, Rng& rng, bool bias = true) {
  return Conv3dParams::create(in, out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng, bias);
}

void require_5d(const Var& x, const char* what) {
  if (x.shape().size() != 5)
    throw DimensionError(std::string(what) + " expects an (N, c, t, h, w) map, got " + to_string(x.shape()));
}

}  // namespace

StaParams StaParams::create(std::size_t channels, Rng& rng, std::size_t embed) {
  if (channels == 0) throw ConfigError("STA needs at least one channel");
  if (embed == 0) embed = std::max<std::size_t>(1, channels / 2);
  StaParams p;
  p.theta = pointwise(channels, embed, rng);
  // No bias: it would shift whole attention rows, which the softmax cancels.
  p.phi = pointwise(channels, embed, rng, false);
  p.g = pointwise(channels, embed, rng);
  p.h = pointwise(embed, channels, rng);
  return p;
}

void StaParams::visit(ParamRegistry& reg, const std::string& prefix) {
  theta.visit(reg, prefix + ".theta");
  phi.visit(reg, prefix + ".phi");
  g.visit(reg, prefix + ".g");
  h.visit(reg, prefix + ".h");
}

void StaParams::zero_output() {
  h.weight.value.fill(0.0);
  h.bias.value.fill(0.0);
}

StaResult sta_forward(Context& ctx, StaParams& p, Var x) {
  require_5d(x, "sta_forward");
  const Shape& s = x.shape();
  const std::size_t N = s[0], c = s[1], n = s[2] * s[3] * s[4];
  if (p.theta.out_channels() != p.phi.out_channels())
    throw ConfigError("STA embedding mismatch: theta emits " + std::to_string(p.theta.out_channels()) +
                      " channels, phi emits " + std::to_string(p.phi.out_channels()));
  if (p.theta.in_channels() != c || p.h.out_channels() != c)
    throw ConfigError("STA configured for " + std::to_string(p.theta.in_channels()) +
                      " channels, input has " + std::to_string(c));
  const std::size_t e = p.theta.out_channels();
  const std::size_t eg = p.g.out_channels();

  Var th = reshape(p.theta.forward(ctx, x), {N, e, n});
  Var ph = reshape(p.phi.forward(ctx, x), {N, e, n});
  Var gx = reshape(p.g.forward(ctx, x), {N, eg, n});

  Var a = softmax(matmul(transpose(th), ph), 2);
  Var y = reshape(matmul(gx, transpose(a)), {N, eg, s[2], s[3], s[4]});
  Var z = p.h.forward(ctx, y);
  return {p.residual ? add(x, z) : z, a};
}

VfeParams VfeParams::create(std::size_t channels, Rng& rng) {
  VfeParams p;
  // Bias-free for the same reason: constant offsets cancel in the temporal
  // softmax.
  p.f1 = pointwise(channels, channels, rng, false);
  p.f_st = pointwise(2, 1, rng, false);
  return p;
}

void VfeParams::visit(ParamRegistry& reg, const std::string& prefix) {
  f1.visit(reg, prefix + ".f1");
  f_st.visit(reg, prefix + ".f_st");
}

VfeResult vfe_forward(Context& ctx, VfeParams& p, Var x_r, Var z_v) {
  require_5d(z_v, "vfe_forward");
  if (x_r.shape() != z_v.shape())
    throw DimensionError("vfe_forward branch mismatch: x_r " + to_string(x_r.shape()) + " vs z_v " +
                         to_string(z_v.shape()));
  auto [p_avg, p_max] = nn::channel_pool(p.f1.forward(ctx, x_r));
  const std::vector<Var> pooled{p_avg, p_max};
  Var m_st = p.f_st.forward(ctx, concat(pooled, 1));
  Var m = nn::channel_expand(softmax(m_st, 2), z_v.shape()[1]);
  return {mul(z_v, m), m, m_st};
}

Var enrich(Var f, Var z_v) {
  if (f.shape() != z_v.shape())
    throw DimensionError("enrich shape mismatch: " + to_string(f.shape()) + " vs " + to_string(z_v.shape()));
  return add(f, z_v);
}

}  // namespace rstan::model
