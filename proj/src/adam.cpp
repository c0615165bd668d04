#include "duet/adam.hpp"

#include <cmath>

#include "duet/errors.hpp"

namespace duet::ad {

double LearningRateSchedule::at(std::size_t step) const {
  double rate = initial;
  for (const auto& [after, value] : milestones) {
    if (step > after) rate = value;
  }
  return rate;
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " + params[i]->shape_string() +
                       " but gradient " + grads[i].shape_string());
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  if (state.first_moment.empty()) {
    for (Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter list changed size between steps");
  }

  const AdamConfig& cfg = state.config;
  const std::size_t t = state.step + 1;
  const double lr = cfg.schedule.at(t);
  const double correction1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double correction2 = 1.0 - std::pow(cfg.beta2, double(t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (m.shape() != params[i]->shape()) throw ShapeError("adam_step: moment shape drifted from parameter");
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  state.step = t;
  state.last_learning_rate = lr;
}

}  // namespace duet::ad
