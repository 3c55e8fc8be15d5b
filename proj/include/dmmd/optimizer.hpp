#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dmmd/backbone.hpp"

namespace dmmd {

struct AdamConfig {
  double base_lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int schedule_period = 20;      // epochs between learning-rate drops
  double schedule_factor = 10.0; // divide lr by this at each drop

  void validate() const {
    detail::require(base_lr > 0.0, "adam: base_lr must be positive");
    detail::require(schedule_period > 0, "adam: schedule period must be positive");
    detail::require(schedule_factor > 0.0, "adam: schedule factor must be positive");
  }

  // Single-step schedule: base_lr / factor^floor(epoch / period).
  double learning_rate(int epoch) const {
    return base_lr * std::pow(schedule_factor,
                              -static_cast<double>(epoch / schedule_period));
  }
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step = 0;
  double current_lr = 0.0;

  static AdamState init(const Backbone& model) {
    AdamState s;
    for (std::size_t i = 0; i < model.parameter_count(); ++i) {
      s.first_moment.emplace_back(model.parameter(i).shape());
      s.second_moment.emplace_back(model.parameter(i).shape());
    }
    return s;
  }
};

// One Adam update over all backbone parameters. Gradients are read from the
// tape via the bound leaves; the epoch selects the scheduled learning rate.
inline void adam_step(Backbone& model, AdamState& state, const Tape& tape,
                      const BoundBackbone& bound, const AdamConfig& config,
                      int epoch) {
  config.validate();
  detail::require(state.first_moment.size() == model.parameter_count(),
                  "adam: state does not match model");
  double lr = config.learning_rate(epoch);
  state.current_lr = lr;
  ++state.step;
  double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < model.parameter_count(); ++i) {
    const Tensor& g = tape.grad(bound.params[i]);
    detail::check(g.all_finite(), "adam: non-finite gradient for parameter " +
                                      model.parameter_name(i));
    Tensor& p = model.parameter(i);
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
    detail::check(p.all_finite(), "adam: non-finite parameter " +
                                      model.parameter_name(i) +
                                      " after update");
  }
}

}  // namespace dmmd
