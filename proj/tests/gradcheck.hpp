#pragma once

// Central finite-difference checks for graphs built on duet::ad tapes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "duet/autodiff.hpp"
#include "duet/rng.hpp"

namespace duet::testing {

using GraphBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline ad::Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t = ad::Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double evaluate(const GraphBuilder& build, const std::vector<ad::Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return build(tape, vars).item();
}

/// Max relative error between reverse-mode and central-difference gradients
/// over every input entry. Magnitudes below `floor` count as `floor` so that
/// vanishing gradients compare on an absolute scale.
inline double max_gradient_error(const GraphBuilder& build, const std::vector<ad::Tensor>& inputs,
                                 double h = 1e-5, double floor = 1e-3) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  const ad::Var out = build(tape, vars);
  const ad::Gradients grads = tape.backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const ad::Tensor& analytic = grads[vars[k]];
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      std::vector<ad::Tensor> plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double numeric = (evaluate(build, plus) - evaluate(build, minus)) / (2.0 * h);
      const double scale = std::max({std::fabs(numeric), std::fabs(analytic[i]), floor});
      worst = std::max(worst, std::fabs(numeric - analytic[i]) / scale);
    }
  }
  return worst;
}

/// Wraps a tensor-valued graph into a scalar one: sum(w * f(inputs)) with
/// fixed pseudo-random weights w, so every output entry contributes.
inline GraphBuilder weighted_sum(GraphBuilder f, std::uint64_t seed = 99) {
  return [f = std::move(f), seed](ad::Tape& tape, const std::vector<ad::Var>& in) {
    const ad::Var out = f(tape, in);
    Rng rng(seed);
    const ad::Tensor w = random_tensor(rng, out.rows(), out.cols(), 0.5, 1.5);
    return ad::sum(ad::mul(out, tape.constant(w)));
  };
}

}  // namespace duet::testing
