#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "duet/tensor.hpp"

namespace duet::ad {

/// Piecewise-constant learning rate: `initial` until the first milestone
/// step has been completed, then each milestone's rate in turn.
struct LearningRateSchedule {
  double initial = 1e-4;
  std::vector<std::pair<std::size_t, double>> milestones{{20000, 1e-5}, {40000, 5e-6}};

  /// Rate used by the update that brings the counter to `step` (1-based).
  [[nodiscard]] double at(std::size_t step) const;
};

struct AdamConfig {
  LearningRateSchedule schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for an ordered list of parameters. Moments are created
/// lazily on the first update and must keep matching the parameter shapes.
struct AdamState {
  explicit AdamState(AdamConfig config = {}) : config(std::move(config)) {}

  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
  double last_learning_rate = 0.0;
};

/// One bias-corrected Adam update in place. Rejects the whole step, leaving
/// parameters and state untouched, if any gradient is non-finite.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);

}  // namespace duet::ad
