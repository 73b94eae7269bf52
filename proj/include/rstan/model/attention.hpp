#pragma once

#include <cstddef>
#include <string>

#include "rstan/nn/layers.hpp"

namespace rstan::model {

using nn::Context;
using nn::Conv3dParams;

// Spatio-temporal attention over all n = t*h*w positions of a feature map.
struct StaParams {
  // embed == 0 selects channels / 2 (at least 1).
  static StaParams create(std::size_t channels, Rng& rng, std::size_t embed = 0);

  void visit(ParamRegistry& reg, const std::string& prefix);
  void zero_output();

  Conv3dParams theta, phi, g, h;
  // Adds the attended features back onto the input. Off gives the literal
  // Z = h(A g(X)) form.
  bool residual = true;
};

struct StaResult {
  Var out;        // (N, c, t, h, w)
  Var attention;  // (N, n, n), rows sum to one
};

StaResult sta_forward(Context& ctx, StaParams& p, Var x);

// Visual feature enrichment: turns rPPG features into a temporal attention
// map over the visual features.
struct VfeParams {
  static VfeParams create(std::size_t channels, Rng& rng);

  void visit(ParamRegistry& reg, const std::string& prefix);

  Conv3dParams f1;    // c -> c
  Conv3dParams f_st;  // 2 -> 1
};

struct VfeResult {
  Var f;     // z_v * M
  Var m;     // (N, c, t, h, w), channel-constant, sums to one over t
  Var m_st;  // (N, 1, t, h, w) pre-softmax map
};

VfeResult vfe_forward(Context& ctx, VfeParams& p, Var x_r, Var z_v);

// F_e = F + Z_v.
Var enrich(Var f, Var z_v);

}  // namespace rstan::model
