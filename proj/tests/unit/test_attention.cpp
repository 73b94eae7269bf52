#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rstan/core/errors.hpp"
#include "rstan/core/grad_check.hpp"
#include "rstan/core/ops.hpp"
#include "rstan/model/attention.hpp"

using namespace rstan;
using namespace rstan::model;

namespace {

void set_pointwise(Conv3dParams& c, const std::vector<double>& w, const std::vector<double>& b) {
  c.weight.value = Tensor(c.weight.value.shape(), w);
  c.bias.value = Tensor(c.bias.value.shape(), b);
  c.has_bias = true;
}

void zero(Conv3dParams& c) {
  c.weight.value.fill(0.0);
  c.bias.value.fill(0.0);
}

// Applies a 1x1x1 convolution to the channel vector at flat position i.
std::vector<double> embed(const Conv3dParams& c, const Tensor& x, std::size_t i) {
  const std::size_t co = c.weight.value.dim(0), ci = c.weight.value.dim(1), n = x.size() / ci;
  std::vector<double> out(co);
  for (std::size_t o = 0; o < co; ++o) {
    out[o] = c.bias.value[o];
    for (std::size_t k = 0; k < ci; ++k) out[o] += c.weight.value[o * ci + k] * x[k * n + i];
  }
  return out;
}

std::vector<Parameter*> params_of(StaParams& p) {
  ParamRegistry reg;
  p.visit(reg, "sta");
  return reg.parameters();
}

}  // namespace

TEST(Sta, ZeroInitialisedEmbeddingsGiveUniformAttentionAndIdentity) {
  Rng rng(1);
  StaParams p = StaParams::create(4, rng);
  zero(p.theta);
  zero(p.phi);
  p.zero_output();
  Tensor x = rng.normal_tensor({1, 4, 2, 3, 3});
  Tape tape;
  nn::Context ctx{tape};
  StaResult r = sta_forward(ctx, p, tape.constant(x));
  EXPECT_EQ(r.out.value(), x);
  for (double a : r.attention.value().values()) EXPECT_DOUBLE_EQ(a, 1.0 / 18.0);
}

TEST(Sta, AttentionMatchesDenseSoftmaxOracle) {
  Rng rng(2);
  StaParams p = StaParams::create(2, rng, 2);
  set_pointwise(p.theta, {1.0, -0.5, 0.25, 2.0}, {0.1, 0.0});
  set_pointwise(p.phi, {0.5, 1.5, -1.0, 0.3}, {0.0, -0.2});
  Tensor x(Shape{1, 2, 1, 2, 2}, std::vector<double>{0.3, -1.2, 0.8, 2.0, 1.1, 0.0, -0.4, 0.6});
  Tape tape;
  nn::Context ctx{tape};
  Tensor a = sta_forward(ctx, p, tape.constant(x)).attention.value();
  ASSERT_EQ(a.shape(), (Shape{1, 4, 4}));
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> logits(4);
    for (std::size_t j = 0; j < 4; ++j) {
      const auto th = embed(p.theta, x, i), ph = embed(p.phi, x, j);
      logits[j] = th[0] * ph[0] + th[1] * ph[1];
    }
    double z = 0;
    for (double l : logits) z += std::exp(l);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.at({0, i, j}), std::exp(logits[j]) / z, 1e-12);
  }
}

TEST(Sta, RowsSumToOneAndAreShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    StaParams p = StaParams::create(4, rng);
    Tensor x = rng.normal_tensor({2, 4, 2, 3, 2});
    Tape tape;
    nn::Context ctx{tape};
    Tensor a = sta_forward(ctx, p, tape.constant(x)).attention.value();
    const std::size_t n = 12;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = a.at({b, i, j});
          EXPECT_GT(v, 0.0);
          EXPECT_LT(v, 1.0);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    // A constant offset on phi adds theta_i . v to every logit of row i.
    p.phi.has_bias = true;
    for (std::size_t k = 0; k < p.phi.bias.value.size(); ++k) p.phi.bias.value[k] += rng.uniform(-3, 3);
    Tape tape2;
    nn::Context ctx2{tape2};
    EXPECT_LE(max_abs_diff(sta_forward(ctx2, p, tape2.constant(x)).attention.value(), a), 1e-9);
  }
}

TEST(Sta, PositionPermutationIsEquivariant) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    StaParams p = StaParams::create(4, rng);
    const std::size_t c = 4, n = 2 * 3 * 3;
    Tensor x = rng.normal_tensor({1, c, 2, 3, 3});
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    Tensor xp(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i) xp[ch * n + i] = x[ch * n + perm[i]];
    Tape tape;
    nn::Context ctx{tape};
    Tensor y = sta_forward(ctx, p, tape.constant(x)).out.value();
    Tensor yp = sta_forward(ctx, p, tape.constant(xp)).out.value();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(yp[ch * n + i], y[ch * n + perm[i]], 1e-9);
  }
}

TEST(Sta, LiteralFormAndConfigurationErrors) {
  Rng rng(5);
  StaParams p = StaParams::create(4, rng);
  Tensor x = rng.normal_tensor({1, 4, 2, 2, 2});
  Tape tape;
  nn::Context ctx{tape};
  Tensor with = sta_forward(ctx, p, tape.constant(x)).out.value();
  p.residual = false;
  Tensor without = sta_forward(ctx, p, tape.constant(x)).out.value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(with[i], without[i] + x[i], 1e-12);
  EXPECT_EQ(without.shape(), x.shape());

  StaParams bad = StaParams::create(4, rng);
  bad.phi = Conv3dParams::create(4, 3, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, rng);
  EXPECT_THROW(sta_forward(ctx, bad, tape.constant(x)), ConfigError);
}

TEST(Sta, FullBlockPassesGradCheck) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    StaParams p = StaParams::create(2, rng);
    Parameter x(rng.normal_tensor({1, 2, 4, 3, 3}));
    const Tensor up = rng.normal_tensor({1, 2, 4, 3, 3});
    std::vector<Parameter*> ps = params_of(p);
    ps.push_back(&x);
    const double err = grad_check(
        [&](Tape& t) {
          nn::Context ctx{t};
          return sum(sta_forward(ctx, p, t.param(x)).out * t.constant(up));
        },
        ps);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(Vfe, TimeConstantRppgGivesUniformAttention) {
  Rng rng(7);
  VfeParams p = VfeParams::create(3, rng);
  Tensor xr(Shape{1, 3, 4, 2, 2});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t s = 0; s < 4; ++s) xr[(c * 4 + t) * 4 + s] = 0.1 * double(c) + 0.7 * double(s);
  Tensor z = rng.normal_tensor({1, 3, 4, 2, 2});
  Tape tape;
  nn::Context ctx{tape};
  VfeResult r = vfe_forward(ctx, p, tape.constant(xr), tape.constant(z));
  for (double m : r.m.value().values()) EXPECT_NEAR(m, 0.25, 1e-15);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(r.f.value()[i], z[i] / 4.0, 1e-15);
  Tensor fe = enrich(r.f, tape.constant(z)).value();
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(fe[i], z[i] * 1.25, 1e-12);
}

TEST(Vfe, AttentionNormalisesOverTimeAndIsChannelConstant) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    VfeParams p = VfeParams::create(4, rng);
    Tensor xr = rng.normal_tensor({2, 4, 5, 3, 2}, 0.0, 2.0), z = rng.normal_tensor({2, 4, 5, 3, 2});
    Tape tape;
    nn::Context ctx{tape};
    VfeResult r = vfe_forward(ctx, p, tape.constant(xr), tape.constant(z));
    const Tensor& m = r.m.value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 2; ++w) {
          for (std::size_t c = 0; c < 4; ++c) {
            double total = 0;
            for (std::size_t t = 0; t < 5; ++t) {
              total += m.at({n, c, t, h, w});
              EXPECT_EQ(m.at({n, c, t, h, w}), m.at({n, 0, t, h, w}));
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
          }
        }
    Tensor fe = enrich(r.f, tape.constant(z)).value();
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(fe[i], z[i] * (1.0 + m[i]), 1e-9);
  }
}

TEST(Vfe, MatchesScalarOracleOfEachEquation) {
  Rng rng(9);
  VfeParams p = VfeParams::create(2, rng);
  set_pointwise(p.f1, {0.5, -1.0, 2.0, 0.25}, {0.1, -0.3});
  set_pointwise(p.f_st, {1.5, -0.7}, {0.2});
  Tensor xr = rng.normal_tensor({1, 2, 3, 2, 2}), z = rng.normal_tensor({1, 2, 3, 2, 2});
  Tape tape;
  nn::Context ctx{tape};
  VfeResult r = vfe_forward(ctx, p, tape.constant(xr), tape.constant(z));

  const std::size_t T = 3, S = 4;
  for (std::size_t s = 0; s < S; ++s) {
    double mst[3];
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t pos = t * S + s;
      const double a0 = xr[pos], a1 = xr[T * S + pos];
      const double e0 = 0.5 * a0 - 1.0 * a1 + 0.1, e1 = 2.0 * a0 + 0.25 * a1 - 0.3;
      const double p_avg = (e0 + e1) / 2, p_max = std::max(e0, e1);
      mst[t] = 1.5 * p_avg - 0.7 * p_max + 0.2;
      EXPECT_NEAR(r.m_st.value()[pos], mst[t], 1e-12);
    }
    double zsum = 0;
    for (double v : mst) zsum += std::exp(v);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t idx = (c * T + t) * S + s;
        const double m = std::exp(mst[t]) / zsum;
        EXPECT_NEAR(r.m.value()[idx], m, 1e-12);
        EXPECT_NEAR(r.f.value()[idx], z[idx] * m, 1e-12);
      }
  }
}

TEST(Vfe, LargeLogitSelectsOneTemporalSlice) {
  Rng rng(10);
  VfeParams p = VfeParams::create(2, rng);
  set_pointwise(p.f1, {1, 0, 0, 1}, {0, 0});
  set_pointwise(p.f_st, {1, 1}, {0});
  const std::size_t tau = 2, T = 4, S = 4;
  Tensor xr(Shape{1, 2, T, 2, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t s = 0; s < S; ++s) xr[(c * T + tau) * S + s] = 200.0;
  Tensor z = rng.normal_tensor({1, 2, T, 2, 2});
  Tape tape;
  nn::Context ctx{tape};
  Tensor f = vfe_forward(ctx, p, tape.constant(xr), tape.constant(z)).f.value();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t idx = (c * T + t) * S + s;
        EXPECT_NEAR(f[idx], t == tau ? z[idx] : 0.0, 1e-9);
      }
}

TEST(Vfe, ShapeMismatchNamesBothShapes) {
  Rng rng(11);
  VfeParams p = VfeParams::create(2, rng);
  Tape tape;
  nn::Context ctx{tape};
  try {
    vfe_forward(ctx, p, tape.constant(Tensor(Shape{1, 2, 3, 2, 2})), tape.constant(Tensor(Shape{1, 2, 4, 2, 2})));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1,2,3,2,2)"), std::string::npos);
    EXPECT_NE(msg.find("(1,2,4,2,2)"), std::string::npos);
  }
  EXPECT_THROW(enrich(tape.constant(Tensor(Shape{1, 2})), tape.constant(Tensor(Shape{2, 1}))), DimensionError);
  Tensor zero(Shape{1, 2, 3, 2, 2});
  EXPECT_EQ(enrich(tape.constant(zero), tape.constant(zero)).value(), zero);
}

TEST(Vfe, FullBlockPassesGradCheck) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    VfeParams p = VfeParams::create(3, rng);
    Parameter xr(rng.normal_tensor({1, 3, 4, 2, 2})), z(rng.normal_tensor({1, 3, 4, 2, 2}));
    const Tensor up = rng.normal_tensor({1, 3, 4, 2, 2});
    ParamRegistry reg;
    p.visit(reg, "vfe");
    std::vector<Parameter*> ps = reg.parameters();
    ps.push_back(&xr);
    ps.push_back(&z);
    const double err = grad_check(
        [&](Tape& t) {
          nn::Context ctx{t};
          Var zv = t.param(z);
          VfeResult r = vfe_forward(ctx, p, t.param(xr), zv);
          return sum(enrich(r.f, zv) * t.constant(up));
        },
        ps);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}
