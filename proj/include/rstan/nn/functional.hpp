#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>

#include "rstan/core/random.hpp"
#include "rstan/core/tape.hpp"

// Differentiable building blocks over batched feature maps laid out as
// (N, C, T, H, W), row-major.
namespace rstan::nn {

struct Dim3 {
  std::size_t t = 1, h = 1, w = 1;
  friend bool operator==(const Dim3&, const Dim3&) = default;
};

std::string to_string(const Dim3& d);

enum class Mode { kTrain, kEval };
enum class PoolKind { kMax, kAvg };

// floor((in + 2p - k) / s) + 1, or DimensionError when non-positive.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                            const char* what);

// Cross-correlation. weight: (Co, Ci, kt, kh, kw); bias: (Co).
Var conv3d(Var x, Var weight, std::optional<Var> bias, Dim3 stride, Dim3 padding);

// Transposed convolution (the input-gradient of conv3d with the same weight,
// stride, and padding). weight: (Ci, Co, kt, kh, kw). Output extent per axis
// is (in - 1) * s + k - 2p.
Var conv_transpose3d(Var x, Var weight, std::optional<Var> bias, Dim3 stride, Dim3 padding);

// Temporal-only transposed convolution: spatial kernel 1x1, temporal stride 2.
Var deconv3d_temporal(Var x, Var weight, std::optional<Var> bias, std::size_t pad_t);

// Extends the temporal axis by repeating the first/last frame.
Var pad_time_replicate(Var x, std::size_t before, std::size_t after);

// Padding positions never win a max and are excluded from an average.
Var pool3d(Var x, PoolKind kind, Dim3 kernel, Dim3 stride, Dim3 padding = {0, 0, 0});

// Per-position mean and max over the channel axis, each (N, 1, ...).
// Max ties route the gradient to the lowest channel index.
std::pair<Var, Var> channel_pool(Var x);
// Replicates a single-channel map (N, 1, ...) to (N, channels, ...).
Var channel_expand(Var m, std::size_t channels);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

// Normalises each channel over all non-channel axes. Train mode uses batch
// statistics and updates the running estimates (unbiased variance); eval
// mode uses the running estimates.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode,
               double momentum = 0.1, double eps = 1e-5);

// x: (N, in), weight: (out, in), bias: (out).
Var linear(Var x, Var weight, std::optional<Var> bias);

// Inverted dropout: train mode zeroes with probability p and scales the
// survivors by 1/(1-p); eval mode is the identity.
Var dropout(Var x, double p, Mode mode, Rng& rng);

// Mean over every axis after the channel axis: (N, C, ...) -> (N, C).
Var global_avg_pool(Var x);
// (N, ...) -> (N, prod(...)).
Var flatten(Var x);

}  // namespace rstan::nn
