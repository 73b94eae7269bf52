#include "rstan/core/adam.hpp"

#include <cmath>

#include "rstan/core/errors.hpp"

namespace rstan {

double scheduled_learning_rate(const AdamConfig& config, int epoch) {
  if (config.decay_every <= 0 || epoch < config.decay_every) return config.learning_rate;
  const int decays = config.recurring ? epoch / config.decay_every : 1;
  return config.learning_rate * std::pow(config.decay_gamma, decays);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config,
           std::vector<std::string> names)
    : params_(std::move(params)),
      names_(std::move(names)),
      config_(config),
      lr_(config.learning_rate) {
  if (!(config_.learning_rate > 0.0)) throw ContractError("Adam: learning rate must be positive");
  states_.reserve(params_.size());
  for (Parameter* p : params_) {
    states_.push_back({Tensor::zeros_like(p->value), Tensor::zeros_like(p->value)});
  }
}

void Adam::set_epoch(int epoch) { lr_ = scheduled_learning_rate(config_, epoch); }

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& p = *params_[i];
    if (p.grad.shape() != p.value.shape()) {
      throw DimensionError("Adam: gradient shape " + to_string(p.grad.shape()) +
                           " differs from parameter shape " + to_string(p.value.shape()));
    }
    if (!p.grad.all_finite()) {
      const std::string name = i < names_.size() ? names_[i] : "#" + std::to_string(i);
      throw NumericError("Adam: non-finite gradient in parameter " + name);
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.requires_grad) continue;
    AdamState& s = states_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      s.first_moment[j] = config_.beta1 * s.first_moment[j] + (1.0 - config_.beta1) * g;
      s.second_moment[j] = config_.beta2 * s.second_moment[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = s.first_moment[j] / c1;
      const double v_hat = s.second_moment[j] / c2;
      p.value[j] -= lr_ * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace rstan
