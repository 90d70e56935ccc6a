#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "relmetric/error.hpp"
#include "relmetric/tape.hpp"
#include "relmetric/tensor.hpp"

namespace relmetric {

// RMSProp:
//   acc   <- decay * acc + (1 - decay) * grad^2
//   param <- param - lr * grad / sqrt(acc + eps)
struct OptimizerState {
  std::vector<Tensor> accumulators;  // one per trainable parameter, same order
  Real decay = Real{0.9};
  Real epsilon = Real{1e-8};
  Real learning_rate = Real{0.005};
  std::size_t step = 0;
};

class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(Real decay, Real epsilon) {
    state_.decay = decay;
    state_.epsilon = epsilon;
  }

  OptimizerState& state() noexcept { return state_; }
  const OptimizerState& state() const noexcept { return state_; }

  void set_learning_rate(Real lr) { state_.learning_rate = lr; }

  // Applies one update to every trainable parameter using its accumulated
  // gradient. Accumulators are created lazily on first use.
  void step(const std::vector<Parameter*>& params) {
    std::vector<Parameter*> trainable;
    for (Parameter* p : params)
      if (p->trainable) trainable.push_back(p);
    if (state_.accumulators.empty()) {
      for (const Parameter* p : trainable) state_.accumulators.emplace_back(p->value.shape());
    }
    if (state_.accumulators.size() != trainable.size()) {
      throw ContractError("rmsprop: optimizer state tracks " + std::to_string(state_.accumulators.size()) +
                          " parameters, model has " + std::to_string(trainable.size()));
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      const Parameter& p = *trainable[i];
      if (p.grad.shape() != p.value.shape() || state_.accumulators[i].shape() != p.value.shape()) {
        throw ShapeError("rmsprop: shape mismatch for parameter '" + p.name + "'");
      }
      for (Real g : p.grad.values()) {
        if (!std::isfinite(g)) {
          throw NumericError("rmsprop: non-finite gradient in parameter '" + p.name + "' at step " +
                             std::to_string(state_.step));
        }
      }
    }
    const Real keep = state_.decay;
    const Real mix = Real{1} - state_.decay;
    const Real lr = state_.learning_rate;
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      Parameter& p = *trainable[i];
      Tensor& acc = state_.accumulators[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const Real g = p.grad[j];
        acc[j] = keep * acc[j] + mix * g * g;
        if (g != Real{0}) p.value[j] -= lr * g / std::sqrt(acc[j] + state_.epsilon);
      }
    }
    ++state_.step;
  }

 private:
  OptimizerState state_;
};

}  // namespace relmetric
