#pragma once

#include <string>
#include <vector>

#include "rstan/core/tape.hpp"

namespace rstan {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Step decay: lr *= gamma at epoch boundaries that are multiples of
  // decay_every. With recurring == false the decay is applied once.
  double decay_gamma = 0.8;
  int decay_every = 10;
  bool recurring = true;
};

// Learning rate in effect during a (0-based) epoch.
double scheduled_learning_rate(const AdamConfig& config, int epoch);

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config,
       std::vector<std::string> names = {});

  // Applies one bias-corrected update from each parameter's grad.
  void step();
  void zero_grad();
  void set_epoch(int epoch);

  double learning_rate() const { return lr_; }
  std::size_t step_count() const { return steps_; }
  const AdamState& state(std::size_t i) const { return states_[i]; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::string> names_;
  std::vector<AdamState> states_;
  AdamConfig config_;
  double lr_;
  std::size_t steps_ = 0;
};

}  // namespace rstan
