#include "rstan/core/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rstan/core/errors.hpp"
#include "rstan/core/random.hpp"

namespace rstan {
namespace {

double evaluate(const ParamFunction& f, std::size_t param, std::size_t coord) {
  try {
    Tape tape;
    return f(tape).value().item();
  } catch (const std::exception& e) {
    throw GradCheckError("grad_check: function raised while perturbing parameter " +
                         std::to_string(param) + " coordinate " + std::to_string(coord) +
                         ": " + e.what());
  }
}

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return all;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < limit; ++i) std::swap(all[i], all[i + rng.index(n - i)]);
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

double grad_check(const ParamFunction& f, std::span<Parameter* const> params,
                  const GradCheckOptions& options) {
  if (!(options.eps > 0.0) || std::any_of(options.retry_eps.begin(), options.retry_eps.end(), [](double e) { return !(e > 0.0); }))
    throw ContractError("grad_check: eps must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss;
    try {
      loss = f(tape);
    } catch (const std::exception& e) {
      throw GradCheckError(std::string("grad_check: function raised on the unperturbed input: ") +
                           e.what());
    }
    tape.backward(loss);
  }

  Rng rng(options.seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const Tensor analytic = p.grad;
    for (std::size_t c : pick_coords(p.value.size(), options.max_coords_per_param, rng)) {
      const double orig = p.value[c];
      const double a = analytic[c];
      auto error_at = [&](double eps) {
        double up = 0.0, down = 0.0;
        try {
          p.value[c] = orig + eps;
          up = evaluate(f, pi, c);
          p.value[c] = orig - eps;
          down = evaluate(f, pi, c);
        } catch (...) {
          p.value[c] = orig;
          throw;
        }
        p.value[c] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      };
      double err = error_at(options.eps);
      for (double eps : options.retry_eps) {
        if (err <= options.retry_above) break;
        err = std::min(err, error_at(eps));
      }
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const TensorFunction& f, std::vector<Tensor> inputs,
                  const GradCheckOptions& options) {
  std::vector<Parameter> store;
  store.reserve(inputs.size());
  for (Tensor& t : inputs) store.emplace_back(std::move(t));
  std::vector<Parameter*> ptrs;
  for (Parameter& p : store) ptrs.push_back(&p);
  ParamFunction wrapped = [&](Tape& tape) {
    std::vector<Var> vars;
    for (Parameter& p : store) vars.push_back(tape.param(p));
    return f(tape, vars);
  };
  return grad_check(wrapped, ptrs, options);
}

}  // namespace rstan
