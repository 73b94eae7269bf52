#include "rstan/harness/gradcheck_suite.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

#include "rstan/core/checkpoint.hpp"
#include "rstan/core/errors.hpp"
#include "rstan/core/grad_check.hpp"
#include "rstan/core/ops.hpp"
#include "rstan/core/random.hpp"
#include "rstan/metrics/metrics.hpp"
#include "rstan/model/attention.hpp"
#include "rstan/model/networks.hpp"
#include "rstan/nn/functional.hpp"

namespace rstan::harness {

namespace {

using nn::Dim3;

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// Values bounded away from zero, so ReLU never sits on its kink.
Tensor off_zero(Rng& rng, Shape shape) {
  Tensor t = rng.normal_tensor(std::move(shape));
  for (double& v : t.data()) v = std::copysign(0.1 + std::abs(v), v);
  return t;
}

// sum(f(inputs) * w) with a random cotangent w drawn once per instance.
double check_unary(std::uint64_t seed, std::vector<Tensor> inputs, const std::function<Var(Tape&, std::span<const Var>)>& f) {
  Tensor w;
  return grad_check(
      [&](Tape& tape, std::span<const Var> xs) {
        Var y = f(tape, xs);
        if (w.shape() != y.shape()) {
          Rng rng(derive_seed(seed, 99));
          w = rng.normal_tensor(y.shape());
        }
        return sum(mul(y, tape.constant(w)));
      },
      std::move(inputs), {.eps = 1e-5, .max_coords_per_param = 0, .seed = seed});
}

Shape random_map_shape(Rng& rng) {
  return {draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, 2, 5), draw(rng, 2, 5), draw(rng, 2, 5)};
}

std::vector<GradCheckCase> elementwise_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"matmul", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t m = draw(rng, 1, 5), k = draw(rng, 1, 5), n = draw(rng, 1, 5);
                     return check_unary(s, {rng.normal_tensor({m, k}), rng.normal_tensor({k, n})},
                                        [](Tape&, std::span<const Var> x) { return matmul(x[0], x[1]); });
                   }});
  cases.push_back({"transpose", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {rng.normal_tensor({draw(rng, 1, 5), draw(rng, 1, 5)})},
                                        [](Tape&, std::span<const Var> x) { return transpose(x[0]); });
                   }});
  cases.push_back({"softmax", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t axis = rng.index(2);
                     return check_unary(s, {rng.normal_tensor({draw(rng, 1, 4), draw(rng, 2, 6)}, 0, 2)},
                                        [axis](Tape&, std::span<const Var> x) { return softmax(x[0], axis); });
                   }});
  auto binary = [](const char* name, Var (*op)(Var, Var)) {
    return GradCheckCase{name, [op](std::uint64_t s) {
                           Rng rng(s);
                           const Shape shape = random_map_shape(rng);
                           return check_unary(s, {rng.normal_tensor(shape), rng.normal_tensor(shape)},
                                              [op](Tape&, std::span<const Var> x) { return op(x[0], x[1]); });
                         }};
  };
  cases.push_back(binary("add", add));
  cases.push_back(binary("sub", sub));
  cases.push_back(binary("mul", mul));
  cases.push_back({"scale", [](std::uint64_t s) {
                     Rng rng(s);
                     const double f = rng.normal();
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))},
                                        [f](Tape&, std::span<const Var> x) { return scale(x[0], f); });
                   }});
  cases.push_back({"sum", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))},
                                        [](Tape&, std::span<const Var> x) { return sum(x[0]); });
                   }});
  cases.push_back({"mean", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))},
                                        [](Tape&, std::span<const Var> x) { return mean(x[0]); });
                   }});
  cases.push_back({"reshape", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t a = draw(rng, 1, 4), b = draw(rng, 1, 4), c = draw(rng, 1, 4);
                     return check_unary(s, {rng.normal_tensor({a, b, c})},
                                        [=](Tape&, std::span<const Var> x) { return reshape(x[0], {c, a * b}); });
                   }});
  cases.push_back({"relu", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {off_zero(rng, random_map_shape(rng))},
                                        [](Tape&, std::span<const Var> x) { return relu(x[0]); });
                   }});
  cases.push_back({"concat", [](std::uint64_t s) {
                     Rng rng(s);
                     Shape a = random_map_shape(rng);
                     const std::size_t axis = rng.index(5);
                     Shape b = a;
                     b[axis] = draw(rng, 1, 3);
                     return check_unary(s, {rng.normal_tensor(a), rng.normal_tensor(b)},
                                        [axis](Tape&, std::span<const Var> x) { return concat(x, axis); });
                   }});
  return cases;
}

std::vector<GradCheckCase> layer_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"conv3d", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t ci = draw(rng, 1, 3), co = draw(rng, 1, 3);
                     const Dim3 k{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 3)};
                     const Dim3 st{draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 1, 2)};
                     const Dim3 pd{rng.index(k.t), rng.index(k.h), rng.index(k.w)};
                     const Shape x{draw(rng, 1, 2), ci, draw(rng, 3, 5), draw(rng, 3, 5), draw(rng, 3, 5)};
                     return check_unary(s,
                                        {rng.normal_tensor(x), rng.normal_tensor({co, ci, k.t, k.h, k.w}),
                                         rng.normal_tensor({co})},
                                        [=](Tape&, std::span<const Var> v) { return nn::conv3d(v[0], v[1], v[2], st, pd); });
                   }});
  cases.push_back({"conv_transpose3d", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t ci = draw(rng, 1, 3), co = draw(rng, 1, 3);
                     const Dim3 k{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 3)};
                     const Dim3 st{draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 1, 2)};
                     const Dim3 pd{rng.index(k.t), rng.index(k.h), rng.index(k.w)};
                     const Shape x{draw(rng, 1, 2), ci, draw(rng, 2, 4), draw(rng, 2, 4), draw(rng, 2, 4)};
                     return check_unary(
                         s, {rng.normal_tensor(x), rng.normal_tensor({ci, co, k.t, k.h, k.w}), rng.normal_tensor({co})},
                         [=](Tape&, std::span<const Var> v) { return nn::conv_transpose3d(v[0], v[1], v[2], st, pd); });
                   }});
  cases.push_back({"deconv3d_temporal", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t ci = draw(rng, 1, 3), co = draw(rng, 1, 3), kt = 2 * draw(rng, 1, 2);
                     const std::size_t pad = rng.index(kt / 2);
                     const Shape x{draw(rng, 1, 2), ci, draw(rng, 2, 5), draw(rng, 1, 3), draw(rng, 1, 3)};
                     return check_unary(
                         s, {rng.normal_tensor(x), rng.normal_tensor({ci, co, kt, 1, 1}), rng.normal_tensor({co})},
                         [=](Tape&, std::span<const Var> v) { return nn::deconv3d_temporal(v[0], v[1], v[2], pad); });
                   }});
  cases.push_back({"pad_time_replicate", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t before = rng.index(3), after = rng.index(3);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))}, [=](Tape&, std::span<const Var> v) {
                       return nn::pad_time_replicate(v[0], before, after);
                     });
                   }});
  for (nn::PoolKind kind : {nn::PoolKind::kMax, nn::PoolKind::kAvg})
    cases.push_back({kind == nn::PoolKind::kMax ? "max_pool3d" : "avg_pool3d", [kind](std::uint64_t s) {
                       Rng rng(s);
                       const Dim3 k{draw(rng, 1, 3), draw(rng, 1, 3), draw(rng, 1, 3)};
                       const Dim3 st{draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 1, 2)};
                       const Dim3 pd{rng.index(k.t / 2 + 1), rng.index(k.h / 2 + 1), rng.index(k.w / 2 + 1)};
                       const Shape x{draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, 3, 5), draw(rng, 3, 5), draw(rng, 3, 5)};
                       return check_unary(s, {rng.normal_tensor(x)}, [=](Tape&, std::span<const Var> v) {
                         return nn::pool3d(v[0], kind, k, st, pd);
                       });
                     }});
  cases.push_back({"channel_pool", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))}, [](Tape&, std::span<const Var> v) {
                       auto [avg, max] = nn::channel_pool(v[0]);
                       return concat(std::vector<Var>{avg, max}, 1);
                     });
                   }});
  cases.push_back({"channel_expand", [](std::uint64_t s) {
                     Rng rng(s);
                     Shape shape = random_map_shape(rng);
                     shape[1] = 1;
                     const std::size_t c = draw(rng, 1, 4);
                     return check_unary(s, {rng.normal_tensor(shape)},
                                        [c](Tape&, std::span<const Var> v) { return nn::channel_expand(v[0], c); });
                   }});
  for (nn::Mode mode : {nn::Mode::kTrain, nn::Mode::kEval})
    cases.push_back({mode == nn::Mode::kTrain ? "batch_norm_train" : "batch_norm_eval", [mode](std::uint64_t s) {
                       Rng rng(s);
                       Shape shape = random_map_shape(rng);
                       shape[0] = 2;
                       const std::size_t c = shape[1];
                       nn::BatchNormState state{rng.normal_tensor({c}), rng.uniform_tensor({c}, 0.5, 2.0)};
                       return check_unary(
                           s, {rng.normal_tensor(shape), rng.normal_tensor({c}, 1, 0.3), rng.normal_tensor({c})},
                           [&state, mode](Tape&, std::span<const Var> v) {
                             nn::BatchNormState scratch = state;
                             return nn::batch_norm(v[0], v[1], v[2], scratch, mode);
                           });
                     }});
  cases.push_back({"linear", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t n = draw(rng, 1, 4), in = draw(rng, 1, 6), out = draw(rng, 1, 5);
                     return check_unary(s, {rng.normal_tensor({n, in}), rng.normal_tensor({out, in}), rng.normal_tensor({out})},
                                        [](Tape&, std::span<const Var> v) { return nn::linear(v[0], v[1], v[2]); });
                   }});
  cases.push_back({"dropout", [](std::uint64_t s) {
                     Rng rng(s);
                     const double p = rng.uniform(0.1, 0.6);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))}, [s, p](Tape&, std::span<const Var> v) {
                       Rng mask(derive_seed(s, 7));  // the same mask on every evaluation
                       return nn::dropout(v[0], p, nn::Mode::kTrain, mask);
                     });
                   }});
  cases.push_back({"global_avg_pool", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))},
                                        [](Tape&, std::span<const Var> v) { return nn::global_avg_pool(v[0]); });
                   }});
  cases.push_back({"flatten", [](std::uint64_t s) {
                     Rng rng(s);
                     return check_unary(s, {rng.normal_tensor(random_map_shape(rng))},
                                        [](Tape&, std::span<const Var> v) { return nn::flatten(v[0]); });
                   }});
  return cases;
}

double check_params(std::uint64_t seed, std::vector<Parameter*> params, const std::function<Var(Tape&)>& f,
                    std::size_t coords = 0, std::vector<double> retry_eps = {}) {
  return grad_check(f, params,
                    {.eps = 1e-5, .max_coords_per_param = coords, .seed = seed, .retry_eps = std::move(retry_eps)});
}

void jitter(const ParamRegistry& reg, Rng& rng) {
  for (Parameter* p : reg.parameters())
    for (double& v : p->value.data()) v += rng.normal(0.0, 0.05);
}

std::vector<GradCheckCase> composite_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back({"sta", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t c = draw(rng, 2, 4);
                     model::StaParams p = model::StaParams::create(c, rng);
                     ParamRegistry reg;
                     p.visit(reg, "sta");
                     jitter(reg, rng);
                     Parameter x(rng.normal_tensor({draw(rng, 1, 2), c, draw(rng, 1, 3), draw(rng, 2, 3), draw(rng, 2, 3)}));
                     const Tensor w = rng.normal_tensor(x.value.shape());
                     std::vector<Parameter*> ps = reg.parameters();
                     ps.push_back(&x);
                     return check_params(s, ps, [&](Tape& t) {
                       nn::Context ctx{t};
                       return sum(mul(model::sta_forward(ctx, p, t.param(x)).out, t.constant(w)));
                     });
                   }});
  cases.push_back({"vfe", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t c = draw(rng, 1, 3);
                     model::VfeParams p = model::VfeParams::create(c, rng);
                     ParamRegistry reg;
                     p.visit(reg, "vfe");
                     jitter(reg, rng);
                     const Shape shape{draw(rng, 1, 2), c, draw(rng, 2, 4), draw(rng, 1, 3), draw(rng, 1, 3)};
                     Parameter xr(rng.normal_tensor(shape)), z(rng.normal_tensor(shape));
                     const Tensor w = rng.normal_tensor(shape);
                     std::vector<Parameter*> ps = reg.parameters();
                     ps.push_back(&xr);
                     ps.push_back(&z);
                     return check_params(s, ps, [&](Tape& t) {
                       nn::Context ctx{t};
                       Var zv = t.param(z);
                       model::VfeResult r = model::vfe_forward(ctx, p, t.param(xr), zv);
                       return sum(mul(model::enrich(r.f, zv), t.constant(w)));
                     });
                   }});
  cases.push_back({"neg_pearson", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t n = draw(rng, 1, 4), len = draw(rng, 4, 16);
                     return grad_check(
                         [](Tape&, std::span<const Var> v) { return metrics::neg_pearson_loss(v[0], v[1]); },
                         {rng.normal_tensor({n, len}), rng.normal_tensor({n, len})}, {.seed = s});
                   }});
  cases.push_back({"cross_entropy", [](std::uint64_t s) {
                     Rng rng(s);
                     const std::size_t n = draw(rng, 1, 5), c = draw(rng, 2, 5);
                     std::vector<int> labels;
                     for (std::size_t i = 0; i < n; ++i) labels.push_back(int(rng.index(c)));
                     return grad_check(
                         [&labels](Tape&, std::span<const Var> v) { return metrics::cross_entropy(v[0], labels); },
                         {rng.normal_tensor({n, c}, 0, 2)}, {.seed = s});
                   }});
  cases.push_back({"rstan_toy", [](std::uint64_t s) {
                     model::NetworkConfig cfg;
                     cfg.kind = model::ModelKind::kRstan;
                     cfg.frames = 16;
                     cfg.frame_size = 14;
                     cfg.seed = s;
                     model::Network net = model::Network::create(cfg);
                     Rng rng(derive_seed(s, 1));
                     const Tensor video = rng.uniform_tensor({1, 1, 16, 14, 14}, 0.0, 1.0);
                     const Tensor w_logits = rng.normal_tensor({1, 2});
                     const Tensor w_rppg = rng.normal_tensor({1, 16});
                     ParamRegistry reg = net.registry();
                     jitter(reg, rng);
                     return check_params(
                         s, reg.parameters(),
                         [&](Tape& t) {
                           nn::Context ctx{t};
                           model::NetworkOutput out = net.forward(ctx, t.constant(video));
                           return add(sum(mul(out.logits, t.constant(w_logits))), sum(mul(out.rppg, t.constant(w_rppg))));
                         },
                         3, {1e-4, 1e-6, 1e-3, 1e-7});
                   }});
  return cases;
}

class DropSecondGradient : public BackwardRule {
 public:
  void backward(Tape& tape, const GraphNode& node) const override {
    const Tensor& b = tape.value(node.input_ids[1]);
    std::span<double> ga = tape.grad_sink(node.input_ids[0]);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i] * b[i];
  }
};

}  // namespace

std::size_t GradCheckReport::failures() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += !e.pass;
  return n;
}

std::vector<GradCheckCase> default_gradcheck_cases() {
  std::vector<GradCheckCase> all = elementwise_cases();
  for (auto& c : layer_cases()) all.push_back(std::move(c));
  for (auto& c : composite_cases()) all.push_back(std::move(c));
  return all;
}

GradCheckCase negative_control_case() {
  return {"corrupted_mul", [](std::uint64_t s) {
            Rng rng(s);
            const Shape shape = random_map_shape(rng);
            return check_unary(s, {rng.normal_tensor(shape), rng.normal_tensor(shape)},
                               [](Tape& tape, std::span<const Var> x) {
                                 Tensor v = x[0].value();
                                 const Tensor& b = x[1].value();
                                 for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b[i];
                                 return tape.record("corrupted_mul", {x[0], x[1]}, std::move(v),
                                                    std::make_unique<DropSecondGradient>());
                               });
          }};
}

GradCheckReport run_gradcheck_suite(std::span<const GradCheckCase> cases, std::size_t instances, double tolerance,
                                    std::uint64_t base_seed) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (const GradCheckCase& c : cases) {
    double worst = 0.0;
    for (std::size_t i = 0; i < instances; ++i) {
      GradCheckEntry e{c.op, derive_seed(base_seed, i), 0.0, false};
      try {
        e.error = c.run(e.seed);
      } catch (const std::exception& ex) {
        spdlog::warn("gradcheck {} seed {}: {}", c.op, e.seed, ex.what());
        e.error = std::numeric_limits<double>::infinity();
      }
      e.pass = e.error < tolerance;
      worst = std::max(worst, e.error);
      report.entries.push_back(e);
    }
    spdlog::info("gradcheck {:<20} max rel error {:.3e}", c.op, worst);
  }
  return report;
}

void write_gradcheck_csv(const std::filesystem::path& path, const GradCheckReport& report) {
  std::ofstream os(path);
  os << "op,seed,max_rel_error,pass\n";
  char buf[64];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "%.6e", e.error);
    os << e.op << ',' << e.seed << ',' << buf << ',' << (e.pass ? "true" : "false") << '\n';
  }
  if (!os) throw ContractError("cannot write " + path.string());
}

}  // namespace rstan::harness
