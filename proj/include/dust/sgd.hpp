#pragma once

#include <vector>

#include "dust/params.hpp"

namespace dust {

struct SgdOptions {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// Momentum buffers, one per registered parameter, created on first step.
template <typename T>
struct BasicSgdState {
  SgdOptions options;
  std::vector<std::vector<T>> velocity;

  BasicSgdState() = default;
  explicit BasicSgdState(SgdOptions opts) : options(opts) {}
};

using SgdState = BasicSgdState<float>;

/// v <- m*v + (g + wd*p); p <- p - lr*v; then clears every gradient.
/// Throws std::logic_error if any parameter has no gradient.
template <typename T>
void sgd_step(BasicParamSet<T>& params, BasicSgdState<T>& state);

}  // namespace dust
