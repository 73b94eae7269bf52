#include "rstan/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rstan/core/errors.hpp"

namespace rstan {
namespace {

struct MatShape {
  std::size_t batch, m, k, n;
};

MatShape matmul_shape(const Shape& a, const Shape& b) {
  if (a.size() == 2 && b.size() == 2 && a[1] == b[0]) return {1, a[0], a[1], b[1]};
  if (a.size() == 3 && b.size() == 3 && a[0] == b[0] && a[2] == b[1]) {
    return {a[0], a[1], a[2], b[2]};
  }
  throw DimensionError("matmul shape mismatch: " + to_string(a) + " x " + to_string(b));
}

class MatmulRule : public BackwardRule {
 public:
  explicit MatmulRule(MatShape s) : s_(s) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    const double* a = tape.value(node.input_ids[0]).raw();
    const double* b = tape.value(node.input_ids[1]).raw();
    const double* g = node.grad.raw();
    auto da = tape.grad_sink(node.input_ids[0]);
    auto db = tape.grad_sink(node.input_ids[1]);
    const auto [batch, m, k, n] = s_;
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* ab = a + bi * m * k;
      const double* bb = b + bi * k * n;
      const double* gb = g + bi * m * n;
      if (!da.empty()) {
        double* dab = da.data() + bi * m * k;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gb[i * n + j] * bb[p * n + j];
            dab[i * k + p] += acc;
          }
        }
      }
      if (!db.empty()) {
        double* dbb = db.data() + bi * k * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ab[i * k + p];
            for (std::size_t j = 0; j < n; ++j) dbb[p * n + j] += av * gb[i * n + j];
          }
        }
      }
    }
  }

 private:
  MatShape s_;
};

class TransposeRule : public BackwardRule {
 public:
  TransposeRule(std::size_t batch, std::size_t rows, std::size_t cols)
      : batch_(batch), rows_(rows), cols_(cols) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const double* g = node.grad.raw();
    for (std::size_t b = 0; b < batch_; ++b) {
      for (std::size_t i = 0; i < rows_; ++i) {
        for (std::size_t j = 0; j < cols_; ++j) {
          dx[b * rows_ * cols_ + i * cols_ + j] += g[b * rows_ * cols_ + j * rows_ + i];
        }
      }
    }
  }

 private:
  std::size_t batch_, rows_, cols_;
};

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

class SoftmaxRule : public BackwardRule {
 public:
  explicit SoftmaxRule(AxisSplit s) : s_(s) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const double* y = node.value.raw();
    const double* g = node.grad.raw();
    for (std::size_t o = 0; o < s_.outer; ++o) {
      for (std::size_t in = 0; in < s_.inner; ++in) {
        const std::size_t base = o * s_.n * s_.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s_.n; ++k) {
          dot += g[base + k * s_.inner] * y[base + k * s_.inner];
        }
        for (std::size_t k = 0; k < s_.n; ++k) {
          const std::size_t i = base + k * s_.inner;
          dx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  }

 private:
  AxisSplit s_;
};

// Flat index into b for every flat index of a, under b's size-1 broadcasting.
std::vector<std::size_t> broadcast_map(const Shape& a, const Shape& b) {
  const std::size_t rank = a.size();
  std::vector<std::size_t> b_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    b_stride[d] = b[d] == 1 ? 0 : stride;
    stride *= b[d];
  }
  std::vector<std::size_t> map(numel(a));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += b_stride[d];
      if (idx[d] < a[d]) break;
      off -= b_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  bool ok = a.size() == b.size();
  for (std::size_t d = 0; ok && d < a.size(); ++d) ok = b[d] == a[d] || b[d] == 1;
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a) +
                         " and " + to_string(b));
  }
}

enum class Binary { kAdd, kMul, kSub };

class BinaryRule : public BackwardRule {
 public:
  BinaryRule(Binary kind, std::vector<std::size_t> map)
      : kind_(kind), map_(std::move(map)) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    const Tensor& a = tape.value(node.input_ids[0]);
    const Tensor& b = tape.value(node.input_ids[1]);
    auto da = tape.grad_sink(node.input_ids[0]);
    auto db = tape.grad_sink(node.input_ids[1]);
    const double* g = node.grad.raw();
    const std::size_t n = node.grad.size();
    auto bi = [&](std::size_t i) { return map_.empty() ? i : map_[i]; };
    switch (kind_) {
      case Binary::kAdd:
      case Binary::kSub: {
        const double sign = kind_ == Binary::kAdd ? 1.0 : -1.0;
        if (!da.empty()) for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
        if (!db.empty()) for (std::size_t i = 0; i < n; ++i) db[bi(i)] += sign * g[i];
        break;
      }
      case Binary::kMul:
        if (!da.empty()) for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * b[bi(i)];
        if (!db.empty()) for (std::size_t i = 0; i < n; ++i) db[bi(i)] += g[i] * a[i];
        break;
    }
  }

 private:
  Binary kind_;
  std::vector<std::size_t> map_;
};

Var binary(const char* name, Binary kind, Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_broadcast(name, av.shape(), bv.shape());
  std::vector<std::size_t> map;
  if (av.shape() != bv.shape()) map = broadcast_map(av.shape(), bv.shape());
  Tensor out(av.shape());
  const std::size_t n = out.size();
  auto bi = [&](std::size_t i) { return map.empty() ? i : map[i]; };
  switch (kind) {
    case Binary::kAdd: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[bi(i)]; break;
    case Binary::kSub: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[bi(i)]; break;
    case Binary::kMul: for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[bi(i)]; break;
  }
  return a.tape().record(name, {a, b}, std::move(out),
                         std::make_unique<BinaryRule>(kind, std::move(map)));
}

class ScaleRule : public BackwardRule {
 public:
  explicit ScaleRule(double f) : f_(f) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += f_ * node.grad[i];
  }

 private:
  double f_;
};

class ReduceRule : public BackwardRule {
 public:
  explicit ReduceRule(double f) : f_(f) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const double g = node.grad[0] * f_;
    for (double& d : dx) d += g;
  }

 private:
  double f_;
};

class IdentityRule : public BackwardRule {
 public:
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += node.grad[i];
  }
};

class ReluRule : public BackwardRule {
 public:
  void backward(Tape& tape, const GraphNode& node) const override {
    auto dx = tape.grad_sink(node.input_ids[0]);
    const Tensor& y = node.value;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (y[i] > 0.0) dx[i] += node.grad[i];
    }
  }
};

class ConcatRule : public BackwardRule {
 public:
  ConcatRule(std::size_t outer, std::size_t inner, std::vector<std::size_t> extents)
      : outer_(outer), inner_(inner), extents_(std::move(extents)) {}
  void backward(Tape& tape, const GraphNode& node) const override {
    std::size_t total = 0;
    for (std::size_t e : extents_) total += e;
    std::size_t start = 0;
    for (std::size_t p = 0; p < extents_.size(); ++p) {
      auto dx = tape.grad_sink(node.input_ids[p]);
      const std::size_t chunk = extents_[p] * inner_;
      if (!dx.empty()) {
        for (std::size_t o = 0; o < outer_; ++o) {
          const double* g = node.grad.raw() + o * total * inner_ + start * inner_;
          double* d = dx.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
        }
      }
      start += extents_[p];
    }
  }

 private:
  std::size_t outer_, inner_;
  std::vector<std::size_t> extents_;
};

}  // namespace

Var matmul(Var a, Var b) {
  const MatShape s = matmul_shape(a.shape(), b.shape());
  Shape out_shape = a.shape().size() == 2 ? Shape{s.m, s.n} : Shape{s.batch, s.m, s.n};
  Tensor out(out_shape);
  const double* av = a.value().raw();
  const double* bv = b.value().raw();
  double* c = out.raw();
  for (std::size_t bi = 0; bi < s.batch; ++bi) {
    const double* ab = av + bi * s.m * s.k;
    const double* bb = bv + bi * s.k * s.n;
    double* cb = c + bi * s.m * s.n;
    for (std::size_t i = 0; i < s.m; ++i) {
      for (std::size_t p = 0; p < s.k; ++p) {
        const double x = ab[i * s.k + p];
        for (std::size_t j = 0; j < s.n; ++j) cb[i * s.n + j] += x * bb[p * s.n + j];
      }
    }
  }
  return a.tape().record("matmul", {a, b}, std::move(out), std::make_unique<MatmulRule>(s));
}

Var transpose(Var a) {
  const Shape& sh = a.shape();
  if (sh.size() != 2 && sh.size() != 3) {
    throw DimensionError("transpose expects rank 2 or 3, got " + to_string(sh));
  }
  const std::size_t batch = sh.size() == 3 ? sh[0] : 1;
  const std::size_t rows = sh[sh.size() - 2];
  const std::size_t cols = sh[sh.size() - 1];
  Shape out_shape = sh;
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Tensor out(out_shape);
  const double* x = a.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        out[b * rows * cols + j * rows + i] = x[b * rows * cols + i * cols + j];
      }
    }
  }
  return a.tape().record("transpose", {a}, std::move(out),
                         std::make_unique<TransposeRule>(batch, rows, cols));
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (!xv.all_finite()) throw NumericError("softmax: non-finite input");
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= total;
    }
  }
  return x.tape().record("softmax", {x}, std::move(out), std::make_unique<SoftmaxRule>(s));
}

Var add(Var a, Var b) { return binary("add", Binary::kAdd, a, b); }
Var mul(Var a, Var b) { return binary("mul", Binary::kMul, a, b); }
Var sub(Var a, Var b) { return binary("sub", Binary::kSub, a, b); }

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape().record("scale", {x}, std::move(out), std::make_unique<ScaleRule>(factor));
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("sum", {x}, Tensor::scalar(total), std::make_unique<ReduceRule>(1.0));
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("mean", {x}, Tensor::scalar(total / n),
                         std::make_unique<ReduceRule>(1.0 / n));
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshape(std::move(shape));
  return x.tape().record("reshape", {x}, std::move(out), std::make_unique<IdentityRule>());
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record("relu", {x}, std::move(out), std::make_unique<ReluRule>());
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const AxisSplit s = split_axis(first, axis);
  std::vector<std::size_t> extents;
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& sh = p.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t d = 0; ok && d < sh.size(); ++d) ok = d == axis || sh[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: shape " + to_string(sh) + " incompatible with " +
                           to_string(first) + " along axis " + std::to_string(axis));
    }
    extents.push_back(sh[axis]);
    out_shape[axis] += sh[axis];
  }
  Tensor out(out_shape);
  const std::size_t total = out_shape[axis];
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t chunk = extents[p] * s.inner;
    const double* src = parts[p].value().raw();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy(src + o * chunk, src + (o + 1) * chunk,
                out.raw() + o * total * s.inner + start * s.inner);
    }
    start += extents[p];
  }
  return parts[0].tape().record("concat", parts, std::move(out),
                                std::make_unique<ConcatRule>(s.outer, s.inner, std::move(extents)));
}

}  // namespace rstan
