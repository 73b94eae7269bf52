#include <algorithm>
#include <memory>
#include <vector>

#include "rstan/core/errors.hpp"
#include "rstan/nn/functional.hpp"

namespace rstan::nn {

using rstan::to_string;
namespace {

struct ConvGeom {
  std::size_t n, ci, t, h, w;     // input
  std::size_t co, kt, kh, kw;     // kernel
  Dim3 stride, pad;
  std::size_t to, ho, wo;         // output

  std::size_t k_size() const { return ci * kt * kh * kw; }
  std::size_t plane() const { return ho * wo; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && stride == Dim3{1, 1, 1} && pad == Dim3{0, 0, 0};
  }
};

ConvGeom conv_geometry(const Shape& x, const Shape& w, Dim3 stride, Dim3 pad) {
  if (x.size() != 5) throw DimensionError("conv3d expects a 5-D input, got " + to_string(x));
  if (w.size() != 5) throw DimensionError("conv3d expects a 5-D weight, got " + to_string(w));
  if (x[1] != w[1]) {
    throw DimensionError("conv3d channel mismatch: input " + to_string(x) + " weight " +
                         to_string(w));
  }
  if (stride.t == 0 || stride.h == 0 || stride.w == 0) throw DimensionError("conv3d stride must be >= 1");
  ConvGeom g{x[0], x[1], x[2], x[3], x[4], w[0], w[2], w[3], w[4], stride, pad, 0, 0, 0};
  g.to = conv_out_extent(g.t, g.kt, stride.t, pad.t, "conv3d temporal");
  g.ho = conv_out_extent(g.h, g.kh, stride.h, pad.h, "conv3d height");
  g.wo = conv_out_extent(g.w, g.kw, stride.w, pad.w, "conv3d width");
  return g;
}

// [lo, hi) range of output columns whose input column o*s + k - p is in [0, n).
std::pair<std::size_t, std::size_t> valid_range(std::size_t n_out, std::size_t n_in,
                                                std::size_t k, std::size_t s, std::size_t p) {
  const long long kk = static_cast<long long>(k) - static_cast<long long>(p);
  long long lo = 0;
  if (kk < 0) lo = (-kk + static_cast<long long>(s) - 1) / static_cast<long long>(s);
  long long hi_excl = 0;
  const long long last = static_cast<long long>(n_in) - 1 - kk;
  if (last >= 0) hi_excl = last / static_cast<long long>(s) + 1;
  hi_excl = std::min<long long>(hi_excl, static_cast<long long>(n_out));
  if (hi_excl < lo) hi_excl = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi_excl)};
}

// Gathers the receptive fields of output time slice `ot` of sample `n` into
// col (k_size rows of plane() columns).
void im2col(const ConvGeom& g, const double* x, std::size_t n, std::size_t ot, double* col) {
  const std::size_t P = g.plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      const long long it = static_cast<long long>(ot * g.stride.t + a) - static_cast<long long>(g.pad.t);
      const bool t_ok = it >= 0 && it < static_cast<long long>(g.t);
      const double* xs = t_ok ? x + ((n * g.ci + c) * g.t + static_cast<std::size_t>(it)) * g.h * g.w : nullptr;
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e, ++row) {
          double* dst = col + row * P;
          if (!t_ok) {
            std::fill(dst, dst + P, 0.0);
            continue;
          }
          const auto [w_lo, w_hi] = valid_range(g.wo, g.w, e, g.stride.w, g.pad.w);
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            double* d = dst + oh * g.wo;
            const long long ih = static_cast<long long>(oh * g.stride.h + b) - static_cast<long long>(g.pad.h);
            if (ih < 0 || ih >= static_cast<long long>(g.h)) {
              std::fill(d, d + g.wo, 0.0);
              continue;
            }
            const double* src = xs + static_cast<std::size_t>(ih) * g.w;
            std::fill(d, d + w_lo, 0.0);
            for (std::size_t ow = w_lo; ow < w_hi; ++ow) d[ow] = src[ow * g.stride.w + e - g.pad.w];
            std::fill(d + w_hi, d + g.wo, 0.0);
          }
        }
      }
    }
  }
}

// Scatter-adds col back into dx; inverse access pattern of im2col.
void col2im(const ConvGeom& g, const double* col, std::size_t n, std::size_t ot, double* dx) {
  const std::size_t P = g.plane();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      const long long it = static_cast<long long>(ot * g.stride.t + a) - static_cast<long long>(g.pad.t);
      const bool t_ok = it >= 0 && it < static_cast<long long>(g.t);
      double* xs = t_ok ? dx + ((n * g.ci + c) * g.t + static_cast<std::size_t>(it)) * g.h * g.w : nullptr;
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e, ++row) {
          if (!t_ok) continue;
          const double* src_row = col + row * P;
          const auto [w_lo, w_hi] = valid_range(g.wo, g.w, e, g.stride.w, g.pad.w);
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long long ih = static_cast<long long>(oh * g.stride.h + b) - static_cast<long long>(g.pad.h);
            if (ih < 0 || ih >= static_cast<long long>(g.h)) continue;
            double* d = xs + static_cast<std::size_t>(ih) * g.w;
            const double* s = src_row + oh * g.wo;
            for (std::size_t ow = w_lo; ow < w_hi; ++ow) d[ow * g.stride.w + e - g.pad.w] += s[ow];
          }
        }
      }
    }
  }
}

class Conv3dRule : public BackwardRule {
 public:
  Conv3dRule(ConvGeom g, bool has_bias) : g_(g), has_bias_(has_bias) {}

  void backward(Tape& tape, const GraphNode& node) const override {
    const ConvGeom& g = g_;
    const double* x = tape.value(node.input_ids[0]).raw();
    const double* w = tape.value(node.input_ids[1]).raw();
    auto dx = tape.grad_sink(node.input_ids[0]);
    auto dw = tape.grad_sink(node.input_ids[1]);
    std::span<double> db;
    if (has_bias_) db = tape.grad_sink(node.input_ids[2]);
    const double* gy = node.grad.raw();
    const std::size_t K = g.k_size();
    const std::size_t P = g.plane();
    const bool fast = g.pointwise();
    std::vector<double> col(fast ? 0 : K * P);
    std::vector<double> dcol(fast || dx.empty() ? 0 : K * P);
    std::vector<const double*> rows(K);

    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t ot = 0; ot < g.to; ++ot) {
        auto grow = [&](std::size_t co) { return gy + ((n * g.co + co) * g.to + ot) * P; };
        if (!db.empty()) {
          for (std::size_t co = 0; co < g.co; ++co) {
            const double* r = grow(co);
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += r[p];
            db[co] += acc;
          }
        }
        if (!dw.empty()) {
          if (fast) {
            for (std::size_t k = 0; k < K; ++k) rows[k] = x + ((n * g.ci + k) * g.t + ot) * P;
          } else {
            im2col(g, x, n, ot, col.data());
            for (std::size_t k = 0; k < K; ++k) rows[k] = col.data() + k * P;
          }
          for (std::size_t co = 0; co < g.co; ++co) {
            const double* r = grow(co);
            double* dwr = dw.data() + co * K;
            for (std::size_t k = 0; k < K; ++k) {
              const double* c = rows[k];
              double acc = 0.0;
              for (std::size_t p = 0; p < P; ++p) acc += r[p] * c[p];
              dwr[k] += acc;
            }
          }
        }
        if (!dx.empty()) {
          for (std::size_t k = 0; k < K; ++k) {
            double* d = fast ? dx.data() + ((n * g.ci + k) * g.t + ot) * P : dcol.data() + k * P;
            if (!fast) std::fill(d, d + P, 0.0);
            for (std::size_t co = 0; co < g.co; ++co) {
              const double wv = w[co * K + k];
              const double* r = grow(co);
              for (std::size_t p = 0; p < P; ++p) d[p] += wv * r[p];
            }
          }
          if (!fast) col2im(g, dcol.data(), n, ot, dx.data());
        }
      }
    }
  }

 private:
  ConvGeom g_;
  bool has_bias_;
};

struct DeconvGeom {
  std::size_t n, ci, t, h, w;
  std::size_t co, kt, kh, kw;
  Dim3 stride, pad;
  std::size_t to, ho, wo;
};

std::size_t deconv_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                          const char* what) {
  const long long v = (static_cast<long long>(in) - 1) * static_cast<long long>(s) +
                      static_cast<long long>(k) - 2 * static_cast<long long>(p);
  if (in == 0 || v <= 0) {
    throw DimensionError(std::string(what) + ": transposed conv output extent " +
                         std::to_string(v) + " is not positive (in=" + std::to_string(in) +
                         ", k=" + std::to_string(k) + ", s=" + std::to_string(s) +
                         ", p=" + std::to_string(p) + ")");
  }
  return static_cast<std::size_t>(v);
}

DeconvGeom deconv_geometry(const Shape& x, const Shape& w, Dim3 stride, Dim3 pad) {
  if (x.size() != 5 || w.size() != 5) {
    throw DimensionError("conv_transpose3d expects 5-D input and weight, got " + to_string(x) +
                         " and " + to_string(w));
  }
  if (x[1] != w[0]) {
    throw DimensionError("conv_transpose3d channel mismatch: input " + to_string(x) +
                         " weight " + to_string(w));
  }
  if (stride.t == 0 || stride.h == 0 || stride.w == 0) {
    throw DimensionError("conv_transpose3d stride must be >= 1");
  }
  DeconvGeom g{x[0], x[1], x[2], x[3], x[4], w[1], w[2], w[3], w[4], stride, pad, 0, 0, 0};
  g.to = deconv_extent(g.t, g.kt, stride.t, pad.t, "temporal");
  g.ho = deconv_extent(g.h, g.kh, stride.h, pad.h, "height");
  g.wo = deconv_extent(g.w, g.kw, stride.w, pad.w, "width");
  return g;
}

// Visits every (input index, weight index, output index) triple of a
// transposed convolution.
template <typename F>
void for_each_deconv_tap(const DeconvGeom& g, F&& f) {
  const std::size_t ksz = g.kt * g.kh * g.kw;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t c = 0; c < g.ci; ++c) {
      for (std::size_t it = 0; it < g.t; ++it) {
        for (std::size_t ih = 0; ih < g.h; ++ih) {
          for (std::size_t iw = 0; iw < g.w; ++iw) {
            const std::size_t xi = (((n * g.ci + c) * g.t + it) * g.h + ih) * g.w + iw;
            for (std::size_t o = 0; o < g.co; ++o) {
              const std::size_t wbase = (c * g.co + o) * ksz;
              for (std::size_t a = 0; a < g.kt; ++a) {
                const long long ot = static_cast<long long>(it * g.stride.t + a) - static_cast<long long>(g.pad.t);
                if (ot < 0 || ot >= static_cast<long long>(g.to)) continue;
                for (std::size_t b = 0; b < g.kh; ++b) {
                  const long long oh = static_cast<long long>(ih * g.stride.h + b) - static_cast<long long>(g.pad.h);
                  if (oh < 0 || oh >= static_cast<long long>(g.ho)) continue;
                  for (std::size_t e = 0; e < g.kw; ++e) {
                    const long long ow = static_cast<long long>(iw * g.stride.w + e) - static_cast<long long>(g.pad.w);
                    if (ow < 0 || ow >= static_cast<long long>(g.wo)) continue;
                    const std::size_t yi =
                        (((n * g.co + o) * g.to + static_cast<std::size_t>(ot)) * g.ho +
                         static_cast<std::size_t>(oh)) * g.wo + static_cast<std::size_t>(ow);
                    f(xi, wbase + (a * g.kh + b) * g.kw + e, yi);
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

class DeconvRule : public BackwardRule {
 public:
  DeconvRule(DeconvGeom g, bool has_bias) : g_(g), has_bias_(has_bias) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    const Tensor& x = tape.value(node.input_ids[0]);
    const Tensor& w = tape.value(node.input_ids[1]);
    auto dx = tape.grad_sink(node.input_ids[0]);
    auto dw = tape.grad_sink(node.input_ids[1]);
    const Tensor& gy = node.grad;
    for_each_deconv_tap(g_, [&](std::size_t xi, std::size_t wi, std::size_t yi) {
      if (!dx.empty()) dx[xi] += w[wi] * gy[yi];
      if (!dw.empty()) dw[wi] += x[xi] * gy[yi];
    });
    if (has_bias_) {
      auto db = tape.grad_sink(node.input_ids[2]);
      if (db.empty()) return;
      const std::size_t plane = g_.to * g_.ho * g_.wo;
      for (std::size_t n = 0; n < g_.n; ++n) {
        for (std::size_t o = 0; o < g_.co; ++o) {
          const double* r = gy.raw() + (n * g_.co + o) * plane;
          for (std::size_t p = 0; p < plane; ++p) db[o] += r[p];
        }
      }
    }
  }

 private:
  DeconvGeom g_;
  bool has_bias_;
};

void check_bias(const std::optional<Var>& bias, std::size_t channels, const char* op) {
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != channels)) {
    throw DimensionError(std::string(op) + ": bias shape " + to_string(bias->shape()) +
                         " does not match " + std::to_string(channels) + " output channels");
  }
}

class PadTimeRule : public BackwardRule {
 public:
  PadTimeRule(std::size_t before, std::size_t t) : before_(before), t_(t) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const Shape& os = node.value.shape();
    const std::size_t nc = os[0] * os[1];
    const std::size_t tp = os[2];
    const std::size_t plane = os[3] * os[4];
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t u = 0; u < tp; ++u) {
        const long long src = std::clamp<long long>(static_cast<long long>(u) - static_cast<long long>(before_), 0,
                                                    static_cast<long long>(t_) - 1);
        const double* g = node.grad.raw() + (c * tp + u) * plane;
        double* d = dx.data() + (c * t_ + static_cast<std::size_t>(src)) * plane;
        for (std::size_t p = 0; p < plane; ++p) d[p] += g[p];
      }
    }
  }

 private:
  std::size_t before_, t_;
};

}  // namespace

std::string to_string(const Dim3& d) {
  return "(" + std::to_string(d.t) + "," + std::to_string(d.h) + "," + std::to_string(d.w) + ")";
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                            const char* what) {
  if (k == 0 || s == 0) throw DimensionError(std::string(what) + ": kernel and stride must be >= 1");
  if (in + 2 * p < k) {
    throw DimensionError(std::string(what) + ": kernel " + std::to_string(k) +
                         " exceeds padded extent " + std::to_string(in + 2 * p));
  }
  return (in + 2 * p - k) / s + 1;
}

Var conv3d(Var x, Var weight, std::optional<Var> bias, Dim3 stride, Dim3 padding) {
  const ConvGeom g = conv_geometry(x.shape(), weight.shape(), stride, padding);
  check_bias(bias, g.co, "conv3d");
  const std::size_t K = g.k_size();
  const std::size_t P = g.plane();
  Tensor out(Shape{g.n, g.co, g.to, g.ho, g.wo});
  const double* xv = x.value().raw();
  const double* wv = weight.value().raw();
  const double* bv = bias ? bias->value().raw() : nullptr;
  const bool fast = g.pointwise();
  std::vector<double> col(fast ? 0 : K * P);
  std::vector<const double*> rows(K);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t ot = 0; ot < g.to; ++ot) {
      if (fast) {
        for (std::size_t k = 0; k < K; ++k) rows[k] = xv + ((n * g.ci + k) * g.t + ot) * P;
      } else {
        im2col(g, xv, n, ot, col.data());
        for (std::size_t k = 0; k < K; ++k) rows[k] = col.data() + k * P;
      }
      for (std::size_t co = 0; co < g.co; ++co) {
        double* y = out.raw() + ((n * g.co + co) * g.to + ot) * P;
        std::fill(y, y + P, bv ? bv[co] : 0.0);
        const double* wr = wv + co * K;
        for (std::size_t k = 0; k < K; ++k) {
          const double w = wr[k];
          const double* c = rows[k];
          for (std::size_t p = 0; p < P; ++p) y[p] += w * c[p];
        }
      }
    }
  }
  auto rule = std::make_unique<Conv3dRule>(g, bias.has_value());
  if (bias) return x.tape().record("conv3d", {x, weight, *bias}, std::move(out), std::move(rule));
  return x.tape().record("conv3d", {x, weight}, std::move(out), std::move(rule));
}

Var conv_transpose3d(Var x, Var weight, std::optional<Var> bias, Dim3 stride, Dim3 padding) {
  const DeconvGeom g = deconv_geometry(x.shape(), weight.shape(), stride, padding);
  check_bias(bias, g.co, "conv_transpose3d");
  Tensor out(Shape{g.n, g.co, g.to, g.ho, g.wo});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  for_each_deconv_tap(g, [&](std::size_t xi, std::size_t wi, std::size_t yi) {
    out[yi] += xv[xi] * wv[wi];
  });
  if (bias) {
    const std::size_t plane = g.to * g.ho * g.wo;
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.co; ++o) {
        double* r = out.raw() + (n * g.co + o) * plane;
        const double b = bias->value()[o];
        for (std::size_t p = 0; p < plane; ++p) r[p] += b;
      }
    }
  }
  auto rule = std::make_unique<DeconvRule>(g, bias.has_value());
  if (bias) return x.tape().record("conv_transpose3d", {x, weight, *bias}, std::move(out), std::move(rule));
  return x.tape().record("conv_transpose3d", {x, weight}, std::move(out), std::move(rule));
}

Var deconv3d_temporal(Var x, Var weight, std::optional<Var> bias, std::size_t pad_t) {
  const Shape& ws = weight.shape();
  if (ws.size() != 5 || ws[3] != 1 || ws[4] != 1) {
    throw DimensionError("deconv3d_temporal requires a (Ci,Co,kt,1,1) weight, got " + to_string(ws));
  }
  return conv_transpose3d(x, weight, bias, Dim3{2, 1, 1}, Dim3{pad_t, 0, 0});
}

Var pad_time_replicate(Var x, std::size_t before, std::size_t after) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw DimensionError("pad_time_replicate expects 5-D input, got " + to_string(s));
  if (s[2] == 0) throw DimensionError("pad_time_replicate on empty temporal axis");
  if (before == 0 && after == 0) return x;
  const std::size_t t = s[2];
  const std::size_t tp = t + before + after;
  const std::size_t plane = s[3] * s[4];
  Tensor out(Shape{s[0], s[1], tp, s[3], s[4]});
  const double* xv = x.value().raw();
  for (std::size_t c = 0; c < s[0] * s[1]; ++c) {
    for (std::size_t u = 0; u < tp; ++u) {
      const long long src = std::clamp<long long>(static_cast<long long>(u) - static_cast<long long>(before), 0,
                                                  static_cast<long long>(t) - 1);
      const double* from = xv + (c * t + static_cast<std::size_t>(src)) * plane;
      std::copy(from, from + plane, out.raw() + (c * tp + u) * plane);
    }
  }
  return x.tape().record("pad_time_replicate", {x}, std::move(out),
                         std::make_unique<PadTimeRule>(before, t));
}

}  // namespace rstan::nn
