#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rstan/core/tape.hpp"

namespace rstan::metrics {

// What a zero-variance signal does inside the loss: raise, or contribute a
// loss of 1 with zero gradient.
enum class DegeneratePolicy { kThrow, kNeutral };

struct PearsonLossStats {
  std::size_t degenerate_rows = 0;
};

// 1 - r(x, y) per row of (N, T) inputs (or a single (T) pair), averaged over
// rows. Differentiable in both arguments.
Var neg_pearson_loss(Var x, Var y, DegeneratePolicy policy = DegeneratePolicy::kThrow,
                     PearsonLossStats* stats = nullptr);

// Pearson r; DegenerateSignalError when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Mean log-softmax cross entropy of (N, C) logits.
Var cross_entropy(Var logits, std::span<const int> labels);

std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Mann-Whitney U with ties counted one half: the number of (positive,
// negative) pairs ranked correctly. Exact for any input (a multiple of 0.5).
struct RankStatistic {
  double u = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double auc() const { return u / (double(positives) * double(negatives)); }
};

RankStatistic mann_whitney(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const double> scores, std::span<const int> labels);

// Centered moving average; the edges repeat the first/last sample.
std::vector<double> smooth(std::span<const double> x, std::size_t window);

struct IbiSeries {
  std::vector<std::size_t> peak_indices;
  std::vector<double> intervals;  // seconds
};

struct PeakOptions {
  std::size_t min_distance = 1;
  // Absolute prominence threshold; unset means 0.1 x peak-to-peak.
  std::optional<double> min_prominence;
};

IbiSeries detect_peaks(std::span<const double> x, double sample_rate, const PeakOptions& options = {});

// Topographic prominence of the sample at index i.
double prominence(std::span<const double> x, std::size_t i);

}  // namespace rstan::metrics
