#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "../support/oracles.hpp"
#include "rstan/core/errors.hpp"
#include "rstan/core/grad_check.hpp"
#include "rstan/core/ops.hpp"
#include "rstan/core/random.hpp"
#include "rstan/metrics/metrics.hpp"

using namespace rstan;
using namespace rstan::metrics;

namespace {

double loss_of(const std::vector<double>& x, const std::vector<double>& y) {
  Tape tape;
  return neg_pearson_loss(tape.constant(Tensor(Shape{x.size()}, x)), tape.constant(Tensor(Shape{y.size()}, y)))
      .value()
      .item();
}

std::vector<double> random_signal(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& a : v) a = rng.normal();
  return v;
}

}  // namespace

TEST(NegPearson, PerfectAndAffineCases) {
  const std::vector<double> x{0.3, 1.5, -0.2, 2.2, 0.9};
  std::vector<double> neg, aff;
  for (double v : x) {
    neg.push_back(-v + 7);
    aff.push_back(3 * v + 5);
  }
  EXPECT_NEAR(loss_of(x, x), 0.0, 1e-15);
  EXPECT_NEAR(loss_of(x, neg), 2.0, 1e-15);
  EXPECT_NEAR(loss_of(x, aff), 0.0, 1e-15);
}

TEST(NegPearson, MatchesDirectFormulaAndFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_signal(rng, 32), y = random_signal(rng, 32);
    EXPECT_NEAR(loss_of(x, y), 1.0 - oracle::pearson(x, y), 1e-12);
  }
  for (int trial = 0; trial < 20; ++trial) {
    const double err = grad_check(
        [](Tape&, std::span<const Var> in) { return neg_pearson_loss(in[0], in[1]); },
        {Tensor(Shape{32}, random_signal(rng, 32)), Tensor(Shape{32}, random_signal(rng, 32))});
    EXPECT_LT(err, 1e-4);
  }
}

TEST(NegPearson, RangeSymmetryAndInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_signal(rng, 16), y = random_signal(rng, 16);
    const double l = loss_of(x, y);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    EXPECT_NEAR(loss_of(y, x), l, 1e-12);
    const double a = rng.uniform(0.1, 10), b = rng.uniform(-5, 5);
    std::vector<double> xs;
    for (double v : x) xs.push_back(a * v + b);
    EXPECT_NEAR(loss_of(xs, y), l, 1e-12);
  }
}

TEST(NegPearson, BatchedRowsAverage) {
  Rng rng(3);
  const auto a = random_signal(rng, 8), b = random_signal(rng, 8), c = random_signal(rng, 8), d = random_signal(rng, 8);
  std::vector<double> xs(a), ys(b);
  xs.insert(xs.end(), c.begin(), c.end());
  ys.insert(ys.end(), d.begin(), d.end());
  Tape tape;
  const double l =
      neg_pearson_loss(tape.constant(Tensor(Shape{2, 8}, xs)), tape.constant(Tensor(Shape{2, 8}, ys))).value().item();
  EXPECT_NEAR(l, (loss_of(a, b) + loss_of(c, d)) / 2, 1e-14);
}

TEST(NegPearson, DegeneratePolicies) {
  const std::vector<double> flat(10, 3.0), x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_THROW(loss_of(x, flat), DegenerateSignalError);
  EXPECT_THROW(pearson(flat, x), DegenerateSignalError);

  Tape tape;
  Var xv = tape.leaf(Tensor(Shape{10}, flat), true);
  PearsonLossStats stats;
  Var l = neg_pearson_loss(xv, tape.constant(Tensor(Shape{10}, x)), DegeneratePolicy::kNeutral, &stats);
  EXPECT_EQ(l.value().item(), 1.0);
  EXPECT_EQ(stats.degenerate_rows, 1u);
  tape.backward(l);
  for (double g : tape.grad(xv.id())->values()) EXPECT_EQ(g, 0.0);
}

TEST(CrossEntropy, UniformLogitsAndLabelRange) {
  Tape tape;
  Var z = tape.constant(Tensor(Shape{1, 5}));
  const std::vector<int> label{3};
  EXPECT_NEAR(cross_entropy(z, label).value().item(), std::log(5.0), 1e-15);
  const std::vector<int> bad{5};
  EXPECT_THROW(cross_entropy(z, bad), ContractError);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<int> labels{0, 2, 1};
    EXPECT_LT(grad_check([&](Tape&, std::span<const Var> in) { return cross_entropy(in[0], labels); },
                         {rng.normal_tensor({3, 3}, 0, 3)}),
              1e-4);
  }
}

TEST(Accuracy, ExactMatchFraction) {
  const std::vector<int> l10{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  EXPECT_EQ(accuracy(l10, l10), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{1, 0, 1, 1}, std::vector<int>{1, 0, 1, 0}), 0.75);
  EXPECT_EQ(argmax_rows(Tensor(Shape{2, 3}, std::vector<double>{0, 5, 1, 2, 2, 1})), (std::vector<int>{1, 0}));
}

TEST(Auc, KnownCasesAndPairwiseOracle) {
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(auc(std::vector<double>(6, 0.4), std::vector<int>{0, 1, 0, 1, 1, 0}), 0.5);
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  const auto f = oracle::auc_pairwise(s, l);
  EXPECT_EQ(2.0 * mann_whitney(s, l).u, double(f.num));
  EXPECT_EQ(auc(s, l), 0.75);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ContractError);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<double> sc(n);
    std::vector<int> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = double(rng.index(6)) / 5.0;  // coarse grid forces ties
      lab[i] = int(rng.index(2));
    }
    lab[0] = 0;
    lab[1] = 1;
    const auto o = oracle::auc_pairwise(sc, lab);
    const RankStatistic st = mann_whitney(sc, lab);
    EXPECT_EQ(2.0 * st.u, double(o.num));
    EXPECT_EQ(2 * st.positives * st.negatives, std::size_t(o.den));

    std::vector<double> distinct(n), flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      distinct[i] = rng.normal();
      flipped[i] = -distinct[i];
    }
    EXPECT_NEAR(auc(distinct, lab) + auc(flipped, lab), 1.0, 1e-15);
  }
}

TEST(Pearson, IdentityAndOracle) {
  Rng rng(6);
  const auto x = random_signal(rng, 20), y = random_signal(rng, 20);
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, y), oracle::pearson(x, y), 1e-12);
}

TEST(Smooth, DefinitionCases) {
  const std::vector<double> x{1.0, 4.0, 2.0, 8.0};
  EXPECT_EQ(smooth(x, 1), x);
  EXPECT_EQ(smooth(std::vector<double>(7, 2.5), 5), std::vector<double>(7, 2.5));
  const auto imp = smooth(std::vector<double>{0, 0, 1, 0, 0}, 3);
  const std::vector<double> want{0, 1.0 / 3, 1.0 / 3, 1.0 / 3, 0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(imp[i], want[i], 1e-15);
  EXPECT_THROW(smooth(x, 2), ContractError);
  EXPECT_THROW(smooth(x, 5), ContractError);
}

TEST(Smooth, PreservesInteriorMeanWithConstantPadding) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 2 * (1 + rng.index(3)) + 1, half = w / 2;
    std::vector<double> x(40, 0.0);
    // Constant margins wider than the window, random interior.
    for (std::size_t i = 2 * half; i + 2 * half < x.size(); ++i) x[i] = rng.normal();
    const auto y = smooth(x, w);
    double a = 0, b = 0;
    for (double v : x) a += v;
    for (double v : y) b += v;
    EXPECT_NEAR(a / 40, b / 40, 1e-12);
  }
}

TEST(Peaks, SinusoidIntervalsMatchPeriod) {
  for (double f : {0.8, 1.2, 1.7}) {
    const double rate = 25.0;
    std::vector<double> x(250);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * f * double(i) / rate);
    const IbiSeries s = detect_peaks(x, rate, {.min_distance = 5, .min_prominence = {}});
    ASSERT_GE(s.intervals.size(), 5u);
    for (double ibi : s.intervals) EXPECT_NEAR(ibi, 1.0 / f, 1.0 / rate);
  }
}

TEST(Peaks, MonotoneSignalHasNone) {
  std::vector<double> x(50);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(i) * 0.3;
  EXPECT_TRUE(detect_peaks(x, 25.0).peak_indices.empty());
}

TEST(Peaks, AscendingAndSeparated) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(200);
    for (double& v : x) v = rng.normal();
    const std::size_t d = 1 + rng.index(10);
    const IbiSeries s = detect_peaks(x, 25.0, {.min_distance = d, .min_prominence = 0.0});
    for (std::size_t i = 1; i < s.peak_indices.size(); ++i) {
      EXPECT_GT(s.peak_indices[i], s.peak_indices[i - 1]);
      EXPECT_GE(s.peak_indices[i] - s.peak_indices[i - 1], d);
      EXPECT_DOUBLE_EQ(s.intervals[i - 1], double(s.peak_indices[i] - s.peak_indices[i - 1]) / 25.0);
    }
  }
}

TEST(Peaks, ProminenceFiltersRipples) {
  // Large bump with a small ripple on its flank.
  const std::vector<double> x{0, 1, 2, 5, 2, 2.2, 1.9, 1, 0};
  EXPECT_DOUBLE_EQ(prominence(x, 3), 5.0);
  EXPECT_NEAR(prominence(x, 5), 0.2, 1e-15);
  const IbiSeries s = detect_peaks(x, 1.0);
  EXPECT_EQ(s.peak_indices, (std::vector<std::size_t>{3}));
}
