#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rstan/core/tape.hpp"

namespace rstan {

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise this many coordinates per parameter
  // are drawn (deterministically from seed) for the central difference.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Extra step sizes for coordinates whose error at eps exceeds
  // retry_above; the coordinate keeps its smallest error. A step that
  // straddles a ReLU or max-pool switch disagrees only at that step, while
  // a wrong backward disagrees at every step.
  std::vector<double> retry_eps;
  double retry_above = 1e-6;
};

// Raised when the checked function throws; the message names the parameter
// index and coordinate being perturbed.
class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// f must build a scalar on the given tape from the bound parameters.
using ParamFunction = std::function<Var(Tape&)>;
using TensorFunction = std::function<Var(Tape&, std::span<const Var>)>;

// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over the checked
// coordinates of every parameter. Parameter values are restored on return.
double grad_check(const ParamFunction& f, std::span<Parameter* const> params,
                  const GradCheckOptions& options = {});

// Convenience form: each input tensor becomes a leaf that requires grad.
double grad_check(const TensorFunction& f, std::vector<Tensor> inputs,
                  const GradCheckOptions& options = {});

}  // namespace rstan
