#pragma once

// Naive reference implementations used only by tests. Deliberately written
// as direct loops over the textbook definitions, sharing no code with the
// library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "rstan/core/tensor.hpp"
#include "rstan/nn/functional.hpp"

namespace oracle {

using rstan::Shape;
using rstan::Tensor;
using rstan::nn::Dim3;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = s;
    }
  return c;
}

inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  return (in + 2 * p - k) / s + 1;
}

// Seven nested loops (n, co, ot, oh, ow, ci, kernel volume).
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* b, Dim3 s, Dim3 p) {
  const std::size_t N = x.dim(0), Ci = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(0), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const std::size_t To = out_extent(T, kt, s.t, p.t), Ho = out_extent(H, kh, s.h, p.h),
                    Wo = out_extent(W, kw, s.w, p.w);
  Tensor y(Shape{N, Co, To, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t ot = 0; ot < To; ++ot)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double acc = b ? (*b)[co] : 0.0;
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t bb = 0; bb < kh; ++bb)
                  for (std::size_t c = 0; c < kw; ++c) {
                    const long it = long(ot * s.t + a) - long(p.t);
                    const long ih = long(oh * s.h + bb) - long(p.h);
                    const long iw = long(ow * s.w + c) - long(p.w);
                    if (it < 0 || ih < 0 || iw < 0 || it >= long(T) || ih >= long(H) || iw >= long(W))
                      continue;
                    acc += x.at({n, ci, std::size_t(it), std::size_t(ih), std::size_t(iw)}) *
                           w.at({co, ci, a, bb, c});
                  }
            y.at({n, co, ot, oh, ow}) = acc;
          }
  return y;
}

// Scatter form of the transposed convolution: each input element adds
// x * w into the output window it maps to. weight: (Ci, Co, kt, kh, kw).
inline Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor* b, Dim3 s, Dim3 p) {
  const std::size_t N = x.dim(0), Ci = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t Co = w.dim(1), kt = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const std::size_t To = (T - 1) * s.t + kt - 2 * p.t, Ho = (H - 1) * s.h + kh - 2 * p.h,
                    Wo = (W - 1) * s.w + kw - 2 * p.w;
  Tensor y(Shape{N, Co, To, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t h = 0; h < Ho; ++h)
          for (std::size_t ww = 0; ww < Wo; ++ww) y.at({n, co, t, h, ww}) = b ? (*b)[co] : 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t ww = 0; ww < W; ++ww)
            for (std::size_t co = 0; co < Co; ++co)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t bb = 0; bb < kh; ++bb)
                  for (std::size_t c = 0; c < kw; ++c) {
                    const long ot = long(t * s.t + a) - long(p.t);
                    const long oh = long(h * s.h + bb) - long(p.h);
                    const long ow = long(ww * s.w + c) - long(p.w);
                    if (ot < 0 || oh < 0 || ow < 0 || ot >= long(To) || oh >= long(Ho) || ow >= long(Wo))
                      continue;
                    y.at({n, co, std::size_t(ot), std::size_t(oh), std::size_t(ow)}) +=
                        x.at({n, ci, t, h, ww}) * w.at({ci, co, a, bb, c});
                  }
  return y;
}

// Window loop; padded positions are skipped (never win a max, excluded from
// the average count).
inline Tensor pool3d(const Tensor& x, bool is_max, Dim3 k, Dim3 s, Dim3 p) {
  const std::size_t N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t To = out_extent(T, k.t, s.t, p.t), Ho = out_extent(H, k.h, s.h, p.h),
                    Wo = out_extent(W, k.w, s.w, p.w);
  Tensor y(Shape{N, C, To, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ot = 0; ot < To; ++ot)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double best = -std::numeric_limits<double>::infinity(), total = 0.0;
            std::size_t count = 0;
            for (std::size_t a = 0; a < k.t; ++a)
              for (std::size_t b = 0; b < k.h; ++b)
                for (std::size_t d = 0; d < k.w; ++d) {
                  const long it = long(ot * s.t + a) - long(p.t);
                  const long ih = long(oh * s.h + b) - long(p.h);
                  const long iw = long(ow * s.w + d) - long(p.w);
                  if (it < 0 || ih < 0 || iw < 0 || it >= long(T) || ih >= long(H) || iw >= long(W))
                    continue;
                  const double v = x.at({n, c, std::size_t(it), std::size_t(ih), std::size_t(iw)});
                  best = std::max(best, v);
                  total += v;
                  ++count;
                }
            y.at({n, c, ot, oh, ow}) = is_max ? best : total / double(count);
          }
  return y;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double T = double(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  return (T * sxy - sx * sy) / std::sqrt((T * sxx - sx * sx) * (T * syy - sy * sy));
}

// Pairwise AUC as an exact fraction: wins*2 + ties over 2 * n_pos * n_neg.
struct Fraction {
  long long num;
  long long den;
};

inline Fraction auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  long long twice = 0, pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        if (scores[i] > scores[j]) twice += 2;
        else if (scores[i] == scores[j]) twice += 1;
      }
  return {twice, 2 * pos * neg};
}

}  // namespace oracle
