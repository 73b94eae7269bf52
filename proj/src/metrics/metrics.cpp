#include "rstan/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "rstan/core/errors.hpp"

namespace rstan::metrics {

namespace {

struct RowMoments {
  double r = 0.0;
  double sxx = 0.0, syy = 0.0;  // centered sums of squares
  double xm = 0.0, ym = 0.0;
  bool degenerate = false;
};

bool vanishing(double centered, std::span<const double> v) {
  double raw = 0.0;
  for (double a : v) raw += a * a;
  return centered <= 1e-20 * std::max(1.0, raw);
}

RowMoments moments(std::span<const double> x, std::span<const double> y) {
  RowMoments m;
  const double n = double(x.size());
  m.xm = std::accumulate(x.begin(), x.end(), 0.0) / n;
  m.ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.xm, dy = y[i] - m.ym;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    sxy += dx * dy;
  }
  m.degenerate = vanishing(m.sxx, x) || vanishing(m.syy, y);
  if (!m.degenerate) m.r = std::clamp(sxy / std::sqrt(m.sxx * m.syy), -1.0, 1.0);
  return m;
}

void pair_shape(const Shape& a, const Shape& b, std::size_t& rows, std::size_t& len) {
  if (a != b || a.empty() || a.size() > 2)
    throw DimensionError("neg_pearson_loss expects equal (T) or (N, T) shapes, got " + to_string(a) + " and " +
                         to_string(b));
  rows = a.size() == 2 ? a[0] : 1;
  len = a.back();
  if (len < 2) throw ContractError("Pearson correlation needs at least 2 samples");
}

class NegPearsonRule : public BackwardRule {
 public:
  NegPearsonRule(std::size_t rows, std::size_t len, std::vector<RowMoments> m)
      : rows_(rows), len_(len), m_(std::move(m)) {}

  // dr/dx_i = (y_i - ym)/sqrt(Sxx Syy) - r (x_i - xm)/Sxx, and symmetrically in y.
  void backward(Tape& tape, const GraphNode& node) const override {
    const double g = node.grad[0] / double(rows_);
    const Tensor& x = tape.value(node.input_ids[0]);
    const Tensor& y = tape.value(node.input_ids[1]);
    std::span<double> gx = tape.grad_sink(node.input_ids[0]);
    std::span<double> gy = tape.grad_sink(node.input_ids[1]);
    for (std::size_t r = 0; r < rows_; ++r) {
      const RowMoments& m = m_[r];
      if (m.degenerate) continue;
      const double s = std::sqrt(m.sxx * m.syy);
      for (std::size_t i = 0; i < len_; ++i) {
        const std::size_t k = r * len_ + i;
        const double dx = x[k] - m.xm, dy = y[k] - m.ym;
        if (!gx.empty()) gx[k] -= g * (dy / s - m.r * dx / m.sxx);
        if (!gy.empty()) gy[k] -= g * (dx / s - m.r * dy / m.syy);
      }
    }
  }

 private:
  std::size_t rows_, len_;
  std::vector<RowMoments> m_;
};

class CrossEntropyRule : public BackwardRule {
 public:
  CrossEntropyRule(Tensor probs, std::vector<int> labels) : probs_(std::move(probs)), labels_(std::move(labels)) {}

  void backward(Tape& tape, const GraphNode& node) const override {
    std::span<double> gl = tape.grad_sink(node.input_ids[0]);
    const std::size_t n = probs_.dim(0), c = probs_.dim(1);
    const double g = node.grad[0] / double(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        gl[i * c + j] += g * (probs_[i * c + j] - (int(j) == labels_[i] ? 1.0 : 0.0));
  }

 private:
  Tensor probs_;
  std::vector<int> labels_;
};

}  // namespace

Var neg_pearson_loss(Var x, Var y, DegeneratePolicy policy, PearsonLossStats* stats) {
  std::size_t rows = 0, len = 0;
  pair_shape(x.shape(), y.shape(), rows, len);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  std::vector<RowMoments> m;
  double total = 0.0;
  std::size_t degenerate = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    m.push_back(moments(xv.data().subspan(r * len, len), yv.data().subspan(r * len, len)));
    if (m.back().degenerate) {
      if (policy == DegeneratePolicy::kThrow)
        throw DegenerateSignalError("neg_pearson_loss: zero-variance signal in row " + std::to_string(r));
      ++degenerate;
    }
    total += 1.0 - m.back().r;
  }
  if (stats) stats->degenerate_rows += degenerate;
  return x.tape().record("neg_pearson", {x, y}, Tensor::scalar(total / double(rows)),
                         std::make_unique<NegPearsonRule>(rows, len, std::move(m)));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) throw ContractError("pearson needs at least 2 samples");
  const RowMoments m = moments(x, y);
  if (m.degenerate) throw DegenerateSignalError("pearson: zero-variance signal");
  return m.r;
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross_entropy expects (N, C) logits, got " + to_string(s));
  const std::size_t n = s[0], c = s[1];
  if (labels.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  const Tensor& z = logits.value();
  Tensor probs(s);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= c)
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(c) + ")");
    const double* row = z.raw() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
    loss += lse - row[labels[i]];
  }
  return logits.tape().record("cross_entropy", {logits}, Tensor::scalar(loss / double(n)),
                              std::make_unique<CrossEntropyRule>(std::move(probs),
                                                                 std::vector<int>(labels.begin(), labels.end())));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects (N, C), got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * c;
    out[i] = int(std::max_element(row, row + c) - row);
  }
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
  if (labels.empty()) throw ContractError("accuracy of an empty set is undefined");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return double(hit) / double(labels.size());
}

RankStatistic mann_whitney(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  RankStatistic st;
  // Twice the positive rank sum keeps average ranks integral.
  long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const long long twice_avg = static_cast<long long>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      const int l = labels[order[k]];
      if (l != 0 && l != 1) throw ContractError("auc labels must be 0 or 1");
      if (l == 1) {
        twice_rank_sum += twice_avg;
        ++st.positives;
      } else {
        ++st.negatives;
      }
    }
    i = j;
  }
  if (st.positives == 0 || st.negatives == 0)
    throw ContractError("auc is undefined when only one class is present");
  const long long p = static_cast<long long>(st.positives);
  st.u = double(twice_rank_sum - p * (p + 1)) / 2.0;
  return st;
}

double auc(std::span<const double> scores, std::span<const int> labels) { return mann_whitney(scores, labels).auc(); }

std::vector<double> smooth(std::span<const double> x, std::size_t window) {
  if (window % 2 == 0) throw ContractError("smooth: window must be odd, got " + std::to_string(window));
  if (window > x.size())
    throw ContractError("smooth: window " + std::to_string(window) + " exceeds length " + std::to_string(x.size()));
  const long half = long(window / 2), n = long(x.size());
  std::vector<double> out(x.size());
  for (long i = 0; i < n; ++i) {
    double total = 0.0;
    for (long k = i - half; k <= i + half; ++k) total += x[std::size_t(std::clamp(k, 0L, n - 1))];
    out[std::size_t(i)] = total / double(window);
  }
  return out;
}

double prominence(std::span<const double> x, std::size_t i) {
  const double h = x[i];
  double left_min = h, right_min = h;
  for (std::size_t k = i; k-- > 0;) {
    if (x[k] > h) break;
    left_min = std::min(left_min, x[k]);
  }
  for (std::size_t k = i + 1; k < x.size(); ++k) {
    if (x[k] > h) break;
    right_min = std::min(right_min, x[k]);
  }
  return h - std::max(left_min, right_min);
}

IbiSeries detect_peaks(std::span<const double> x, double sample_rate, const PeakOptions& options) {
  if (options.min_distance < 1) throw ContractError("detect_peaks: min_distance must be at least 1");
  if (!(sample_rate > 0)) throw ContractError("detect_peaks: sample_rate must be positive");
  IbiSeries out;
  if (x.size() < 3) return out;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double threshold = options.min_prominence.value_or(0.1 * (*hi - *lo));

  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i + 1 < x.size(); ++i) {
    if (!(x[i] > x[i - 1])) continue;
    // Plateaus count once, at their first sample, if they descend afterwards.
    std::size_t j = i;
    while (j + 1 < x.size() && x[j + 1] == x[i]) ++j;
    if (j + 1 < x.size() && x[j + 1] < x[i] && prominence(x, i) >= threshold && prominence(x, i) > 0)
      candidates.push_back(i);
    i = j;
  }

  std::vector<std::size_t> by_height = candidates;
  std::stable_sort(by_height.begin(), by_height.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t c : by_height) {
    bool clear = true;
    for (std::size_t k : kept)
      if ((c > k ? c - k : k - c) < options.min_distance) {
        clear = false;
        break;
      }
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  out.peak_indices = kept;
  for (std::size_t i = 1; i < kept.size(); ++i) out.intervals.push_back(double(kept[i] - kept[i - 1]) / sample_rate);
  return out;
}

}  // namespace rstan::metrics
