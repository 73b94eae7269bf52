#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "rstan/core/errors.hpp"
#include "rstan/core/ops.hpp"
#include "rstan/nn/functional.hpp"

namespace rstan::nn {

using rstan::to_string;
namespace {

struct PoolGeom {
  std::size_t nc, t, h, w;
  Dim3 k, s, p;
  std::size_t to, ho, wo;
};

PoolGeom pool_geometry(const Shape& x, Dim3 k, Dim3 s, Dim3 p) {
  if (x.size() != 5) throw DimensionError("pool3d expects a 5-D input, got " + to_string(x));
  if (p.t >= k.t || p.h >= k.h || p.w >= k.w) {
    throw DimensionError("pool3d padding " + to_string(p) + " must be smaller than kernel " +
                         to_string(k));
  }
  PoolGeom g{x[0] * x[1], x[2], x[3], x[4], k, s, p, 0, 0, 0};
  g.to = conv_out_extent(g.t, k.t, s.t, p.t, "pool3d temporal");
  g.ho = conv_out_extent(g.h, k.h, s.h, p.h, "pool3d height");
  g.wo = conv_out_extent(g.w, k.w, s.w, p.w, "pool3d width");
  return g;
}

// Calls f(input_offset) for the valid taps of one output window, in scan
// order (t, h, w).
template <typename F>
void for_each_window_tap(const PoolGeom& g, std::size_t ot, std::size_t oh, std::size_t ow, F&& f) {
  for (std::size_t a = 0; a < g.k.t; ++a) {
    const long long it = static_cast<long long>(ot * g.s.t + a) - static_cast<long long>(g.p.t);
    if (it < 0 || it >= static_cast<long long>(g.t)) continue;
    for (std::size_t b = 0; b < g.k.h; ++b) {
      const long long ih = static_cast<long long>(oh * g.s.h + b) - static_cast<long long>(g.p.h);
      if (ih < 0 || ih >= static_cast<long long>(g.h)) continue;
      for (std::size_t e = 0; e < g.k.w; ++e) {
        const long long iw = static_cast<long long>(ow * g.s.w + e) - static_cast<long long>(g.p.w);
        if (iw < 0 || iw >= static_cast<long long>(g.w)) continue;
        f((static_cast<std::size_t>(it) * g.h + static_cast<std::size_t>(ih)) * g.w +
          static_cast<std::size_t>(iw));
      }
    }
  }
}

class MaxPoolRule : public BackwardRule {
 public:
  explicit MaxPoolRule(std::vector<std::size_t> argmax) : argmax_(std::move(argmax)) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    for (std::size_t i = 0; i < argmax_.size(); ++i) dx[argmax_[i]] += node.grad[i];
  }

 private:
  std::vector<std::size_t> argmax_;
};

class AvgPoolRule : public BackwardRule {
 public:
  explicit AvgPoolRule(PoolGeom g) : g_(g) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const std::size_t in_plane = g_.t * g_.h * g_.w;
    std::size_t oi = 0;
    for (std::size_t c = 0; c < g_.nc; ++c) {
      double* d = dx.data() + c * in_plane;
      for (std::size_t ot = 0; ot < g_.to; ++ot) {
        for (std::size_t oh = 0; oh < g_.ho; ++oh) {
          for (std::size_t ow = 0; ow < g_.wo; ++ow, ++oi) {
            std::size_t count = 0;
            for_each_window_tap(g_, ot, oh, ow, [&](std::size_t) { ++count; });
            const double share = node.grad[oi] / static_cast<double>(count);
            for_each_window_tap(g_, ot, oh, ow, [&](std::size_t off) { d[off] += share; });
          }
        }
      }
    }
  }

 private:
  PoolGeom g_;
};

struct ChannelSplit {
  std::size_t n, c, inner;
};

ChannelSplit channel_split(const Shape& s, const char* op) {
  if (s.size() < 2) throw DimensionError(std::string(op) + " expects rank >= 2, got " + to_string(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

class ChannelMeanRule : public BackwardRule {
 public:
  explicit ChannelMeanRule(ChannelSplit s) : s_(s) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const double inv = 1.0 / static_cast<double>(s_.c);
    for (std::size_t n = 0; n < s_.n; ++n) {
      const double* g = node.grad.raw() + n * s_.inner;
      for (std::size_t c = 0; c < s_.c; ++c) {
        double* d = dx.data() + (n * s_.c + c) * s_.inner;
        for (std::size_t i = 0; i < s_.inner; ++i) d[i] += g[i] * inv;
      }
    }
  }

 private:
  ChannelSplit s_;
};

class ChannelMaxRule : public BackwardRule {
 public:
  explicit ChannelMaxRule(std::vector<std::size_t> argmax) : argmax_(std::move(argmax)) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    for (std::size_t i = 0; i < argmax_.size(); ++i) dx[argmax_[i]] += node.grad[i];
  }

 private:
  std::vector<std::size_t> argmax_;
};

class ChannelExpandRule : public BackwardRule {
 public:
  explicit ChannelExpandRule(ChannelSplit s) : s_(s) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dm = tape.grad_sink(node.input_ids[0]);
    for (std::size_t n = 0; n < s_.n; ++n) {
      double* d = dm.data() + n * s_.inner;
      for (std::size_t c = 0; c < s_.c; ++c) {
        const double* g = node.grad.raw() + (n * s_.c + c) * s_.inner;
        for (std::size_t i = 0; i < s_.inner; ++i) d[i] += g[i];
      }
    }
  }

 private:
  ChannelSplit s_;
};

class BatchNormRule : public BackwardRule {
 public:
  BatchNormRule(ChannelSplit s, std::vector<double> mean, std::vector<double> inv_std, bool train)
      : s_(s), mean_(std::move(mean)), inv_std_(std::move(inv_std)), train_(train) {}

  void backward(Tape& tape, const GraphNode& node) const override {
    const Tensor& x = tape.value(node.input_ids[0]);
    const Tensor& gamma = tape.value(node.input_ids[1]);
    auto dx = tape.grad_sink(node.input_ids[0]);
    auto dgamma = tape.grad_sink(node.input_ids[1]);
    auto dbeta = tape.grad_sink(node.input_ids[2]);
    const Tensor& g = node.grad;
    const double m = static_cast<double>(s_.n * s_.inner);
    for (std::size_t c = 0; c < s_.c; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < s_.n; ++n) {
        const std::size_t base = (n * s_.c + c) * s_.inner;
        for (std::size_t i = 0; i < s_.inner; ++i) {
          const double xhat = (x[base + i] - mean_[c]) * inv_std_[c];
          sum_g += g[base + i];
          sum_gx += g[base + i] * xhat;
        }
      }
      if (!dgamma.empty()) dgamma[c] += sum_gx;
      if (!dbeta.empty()) dbeta[c] += sum_g;
      if (dx.empty()) continue;
      const double k = gamma[c] * inv_std_[c];
      for (std::size_t n = 0; n < s_.n; ++n) {
        const std::size_t base = (n * s_.c + c) * s_.inner;
        for (std::size_t i = 0; i < s_.inner; ++i) {
          if (train_) {
            const double xhat = (x[base + i] - mean_[c]) * inv_std_[c];
            dx[base + i] += k * (g[base + i] - sum_g / m - xhat * sum_gx / m);
          } else {
            dx[base + i] += k * g[base + i];
          }
        }
      }
    }
  }

 private:
  ChannelSplit s_;
  std::vector<double> mean_, inv_std_;
  bool train_;
};

class LinearRule : public BackwardRule {
 public:
  LinearRule(std::size_t n, std::size_t in, std::size_t out, bool has_bias)
      : n_(n), in_(in), out_(out), has_bias_(has_bias) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    const double* x = tape.value(node.input_ids[0]).raw();
    const double* w = tape.value(node.input_ids[1]).raw();
    auto dx = tape.grad_sink(node.input_ids[0]);
    auto dw = tape.grad_sink(node.input_ids[1]);
    std::span<double> db;
    if (has_bias_) db = tape.grad_sink(node.input_ids[2]);
    const double* g = node.grad.raw();
    for (std::size_t r = 0; r < n_; ++r) {
      for (std::size_t o = 0; o < out_; ++o) {
        const double gv = g[r * out_ + o];
        if (!db.empty()) db[o] += gv;
        if (!dw.empty()) {
          double* dwr = dw.data() + o * in_;
          const double* xr = x + r * in_;
          for (std::size_t i = 0; i < in_; ++i) dwr[i] += gv * xr[i];
        }
        if (!dx.empty()) {
          double* dxr = dx.data() + r * in_;
          const double* wr = w + o * in_;
          for (std::size_t i = 0; i < in_; ++i) dxr[i] += gv * wr[i];
        }
      }
    }
  }

 private:
  std::size_t n_, in_, out_;
  bool has_bias_;
};

class MaskRule : public BackwardRule {
 public:
  explicit MaskRule(std::vector<double> mask) : mask_(std::move(mask)) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    for (std::size_t i = 0; i < mask_.size(); ++i) dx[i] += node.grad[i] * mask_[i];
  }

 private:
  std::vector<double> mask_;
};

class GapRule : public BackwardRule {
 public:
  explicit GapRule(ChannelSplit s) : s_(s) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const double inv = 1.0 / static_cast<double>(s_.inner);
    for (std::size_t nc = 0; nc < s_.n * s_.c; ++nc) {
      const double g = node.grad[nc] * inv;
      double* d = dx.data() + nc * s_.inner;
      for (std::size_t i = 0; i < s_.inner; ++i) d[i] += g;
    }
  }

 private:
  ChannelSplit s_;
};

}  // namespace

Var pool3d(Var x, PoolKind kind, Dim3 kernel, Dim3 stride, Dim3 padding) {
  const PoolGeom g = pool_geometry(x.shape(), kernel, stride, padding);
  const Shape& s = x.shape();
  Tensor out(Shape{s[0], s[1], g.to, g.ho, g.wo});
  const double* xv = x.value().raw();
  const std::size_t in_plane = g.t * g.h * g.w;
  std::size_t oi = 0;
  if (kind == PoolKind::kMax) {
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t c = 0; c < g.nc; ++c) {
      const double* src = xv + c * in_plane;
      for (std::size_t ot = 0; ot < g.to; ++ot) {
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          for (std::size_t ow = 0; ow < g.wo; ++ow, ++oi) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            bool any = false;
            for_each_window_tap(g, ot, oh, ow, [&](std::size_t off) {
              if (!any || src[off] > best) {
                best = src[off];
                arg = off;
                any = true;
              }
            });
            out[oi] = best;
            argmax[oi] = c * in_plane + arg;
          }
        }
      }
    }
    return x.tape().record("max_pool3d", {x}, std::move(out),
                           std::make_unique<MaxPoolRule>(std::move(argmax)));
  }
  for (std::size_t c = 0; c < g.nc; ++c) {
    const double* src = xv + c * in_plane;
    for (std::size_t ot = 0; ot < g.to; ++ot) {
      for (std::size_t oh = 0; oh < g.ho; ++oh) {
        for (std::size_t ow = 0; ow < g.wo; ++ow, ++oi) {
          double total = 0.0;
          std::size_t count = 0;
          for_each_window_tap(g, ot, oh, ow, [&](std::size_t off) {
            total += src[off];
            ++count;
          });
          out[oi] = total / static_cast<double>(count);
        }
      }
    }
  }
  return x.tape().record("avg_pool3d", {x}, std::move(out), std::make_unique<AvgPoolRule>(g));
}

std::pair<Var, Var> channel_pool(Var x) {
  const ChannelSplit s = channel_split(x.shape(), "channel_pool");
  if (s.c < 1) throw DimensionError("channel_pool needs at least one channel");
  Shape out_shape = x.shape();
  out_shape[1] = 1;
  Tensor avg(out_shape), mx(out_shape);
  std::vector<std::size_t> argmax(mx.size());
  const Tensor& xv = x.value();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t oi = n * s.inner + i;
      double total = 0.0;
      double best = xv[(n * s.c) * s.inner + i];
      std::size_t arg = (n * s.c) * s.inner + i;
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t xi = (n * s.c + c) * s.inner + i;
        total += xv[xi];
        if (xv[xi] > best) {
          best = xv[xi];
          arg = xi;
        }
      }
      avg[oi] = total / static_cast<double>(s.c);
      mx[oi] = best;
      argmax[oi] = arg;
    }
  }
  Var a = x.tape().record("channel_mean", {x}, std::move(avg), std::make_unique<ChannelMeanRule>(s));
  Var m = x.tape().record("channel_max", {x}, std::move(mx),
                          std::make_unique<ChannelMaxRule>(std::move(argmax)));
  return {a, m};
}

Var channel_expand(Var m, std::size_t channels) {
  if (channels < 1) throw ContractError("channel_expand: channel count must be >= 1");
  const ChannelSplit s0 = channel_split(m.shape(), "channel_expand");
  if (s0.c != 1) throw DimensionError("channel_expand expects one channel, got " + to_string(m.shape()));
  Shape out_shape = m.shape();
  out_shape[1] = channels;
  Tensor out(out_shape);
  const double* mv = m.value().raw();
  for (std::size_t n = 0; n < s0.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy(mv + n * s0.inner, mv + (n + 1) * s0.inner,
                out.raw() + (n * channels + c) * s0.inner);
    }
  }
  return m.tape().record("channel_expand", {m}, std::move(out),
                         std::make_unique<ChannelExpandRule>(ChannelSplit{s0.n, channels, s0.inner}));
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, double momentum,
               double eps) {
  const ChannelSplit s = channel_split(x.shape(), "batch_norm");
  const Shape cshape{s.c};
  if (gamma.shape() != cshape || beta.shape() != cshape || state.running_mean.shape() != cshape ||
      state.running_var.shape() != cshape) {
    throw DimensionError("batch_norm: per-channel tensors must have shape " + to_string(cshape) +
                         " for input " + to_string(x.shape()));
  }
  const Tensor& xv = x.value();
  const double m = static_cast<double>(s.n * s.inner);
  std::vector<double> mean(s.c), inv_std(s.c);
  const bool train = mode == Mode::kTrain;
  for (std::size_t c = 0; c < s.c; ++c) {
    if (train) {
      double total = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* r = xv.raw() + (n * s.c + c) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) total += r[i];
      }
      const double mu = total / m;
      double ss = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* r = xv.raw() + (n * s.c + c) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) ss += (r[i] - mu) * (r[i] - mu);
      }
      const double var = ss / m;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mu;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }
  Tensor out(xv.shape());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double k = gamma.value()[c] * inv_std[c];
      const double b = beta.value()[c] - mean[c] * k;
      const std::size_t base = (n * s.c + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[base + i] = xv[base + i] * k + b;
    }
  }
  return x.tape().record(train ? "batch_norm_train" : "batch_norm_eval", {x, gamma, beta},
                         std::move(out),
                         std::make_unique<BatchNormRule>(s, std::move(mean), std::move(inv_std), train));
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw DimensionError("linear shape mismatch: input " + to_string(xs) + " weight " + to_string(ws));
  }
  if (bias && bias->shape() != Shape{ws[0]}) {
    throw DimensionError("linear bias shape " + to_string(bias->shape()) + " for weight " + to_string(ws));
  }
  const std::size_t n = xs[0], in = xs[1], outn = ws[0];
  Tensor out(Shape{n, outn});
  const double* xv = x.value().raw();
  const double* wv = weight.value().raw();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < outn; ++o) {
      double acc = bias ? bias->value()[o] : 0.0;
      const double* wr = wv + o * in;
      const double* xr = xv + r * in;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      out[r * outn + o] = acc;
    }
  }
  auto rule = std::make_unique<LinearRule>(n, in, outn, bias.has_value());
  if (bias) return x.tape().record("linear", {x, weight, *bias}, std::move(out), std::move(rule));
  return x.tape().record("linear", {x, weight}, std::move(out), std::move(rule));
}

Var dropout(Var x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout probability must be in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  Tensor out = x.value();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return x.tape().record("dropout", {x}, std::move(out), std::make_unique<MaskRule>(std::move(mask)));
}

Var global_avg_pool(Var x) {
  const ChannelSplit s = channel_split(x.shape(), "global_avg_pool");
  Tensor out(Shape{s.n, s.c});
  const double* xv = x.value().raw();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    double total = 0.0;
    for (std::size_t i = 0; i < s.inner; ++i) total += xv[nc * s.inner + i];
    out[nc] = total / static_cast<double>(s.inner);
  }
  return x.tape().record("global_avg_pool", {x}, std::move(out), std::make_unique<GapRule>(s));
}

Var flatten(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("flatten of a scalar");
  return reshape(x, Shape{s[0], numel(s) / s[0]});
}

}  // namespace rstan::nn
