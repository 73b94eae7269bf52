#pragma once

#include <cstddef>
#include <string>

#include "rstan/core/checkpoint.hpp"
#include "rstan/core/random.hpp"
#include "rstan/core/tape.hpp"
#include "rstan/nn/functional.hpp"

namespace rstan::nn {

// Per-forward state: the tape being recorded, train/eval mode, and the
// stream used by dropout.
struct Context {
  Tape& tape;
  Mode mode = Mode::kEval;
  Rng* rng = nullptr;
};

// He-style fan-in uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct Conv3dParams {
  static Conv3dParams create(std::size_t in_channels, std::size_t out_channels, Dim3 kernel,
                             Dim3 stride, Dim3 padding, Rng& rng, bool bias = true);

  Var forward(Context& ctx, Var x);
  void visit(ParamRegistry& reg, const std::string& prefix);

  Dim3 kernel() const;
  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }

  Parameter weight;
  Parameter bias;
  bool has_bias = true;
  Dim3 stride{1, 1, 1};
  Dim3 padding{0, 0, 0};
  // Temporal padding repeats edge frames instead of inserting zeros, so
  // temporally constant input stays constant through the layer.
  bool replicate_time = false;
};

struct BatchNorm {
  static BatchNorm create(std::size_t channels);

  Var forward(Context& ctx, Var x);
  void visit(ParamRegistry& reg, const std::string& prefix);

  Parameter gamma;
  Parameter beta;
  BatchNormState state;
  double momentum = 0.1;
  double eps = 1e-5;
};

// conv -> batch norm -> ReLU.
struct Unit3d {
  static Unit3d create(std::size_t in_channels, std::size_t out_channels, Dim3 kernel,
                       Dim3 stride, Dim3 padding, Rng& rng, bool replicate_time = true);

  Var forward(Context& ctx, Var x);
  void visit(ParamRegistry& reg, const std::string& prefix);

  Conv3dParams conv;
  BatchNorm bn;
};

struct Linear {
  static Linear create(std::size_t in_features, std::size_t out_features, Rng& rng);

  Var forward(Context& ctx, Var x);
  void visit(ParamRegistry& reg, const std::string& prefix);
  void zero();

  Parameter weight;
  Parameter bias;
};

struct PoolSpec {
  PoolKind kind = PoolKind::kMax;
  Dim3 kernel{1, 1, 1};
  Dim3 stride{1, 1, 1};
  Dim3 padding{0, 0, 0};

  Var apply(Var x) const { return pool3d(x, kind, kernel, stride, padding); }
};

// Channel widths of the four inception branches.
struct InceptionWidths {
  std::size_t b0 = 0;
  std::size_t b1_reduce = 0, b1 = 0;
  std::size_t b2_reduce = 0, b2 = 0;
  std::size_t b3 = 0;

  std::size_t total() const { return b0 + b1 + b2 + b3; }
  // I3D-like proportions (1/4, 1/2, 1/8, rest) for a given output width.
  static InceptionWidths split(std::size_t out_channels);
};

// Four parallel branches (1x1x1; 1x1x1->3x3x3; 1x1x1->3x3x3;
// maxpool->1x1x1), same-padded, concatenated along channels.
struct InceptionBlock {
  static InceptionBlock create(std::size_t in_channels, const InceptionWidths& widths, Rng& rng);

  Var forward(Context& ctx, Var x);
  void visit(ParamRegistry& reg, const std::string& prefix);
  std::size_t out_channels() const { return widths.total(); }

  InceptionWidths widths;
  Unit3d b0, b1a, b1b, b2a, b2b, b3;
  PoolSpec pool{PoolKind::kMax, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
};

}  // namespace rstan::nn
