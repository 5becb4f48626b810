#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dust/tensor.hpp"

namespace dust {

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t coordinates = 0;
  std::string worst;  // "input#index" of the worst coordinate
  double worst_analytic = 0, worst_numeric = 0;
};

using GradCheckFn = std::function<Tensor64(const std::vector<Tensor64>&)>;

/// Compares reverse-mode gradients of L = sum_i w_i * fn(inputs)_i against
/// central differences with the given step, in double precision. The weights w
/// are fixed pseudo-random values in +-[0.5, 1.5]. Each coordinate contributes
/// |analytic - numeric| / max(1e-8, |numeric|).
GradCheckReport check_gradients(const GradCheckFn& fn, std::vector<Tensor64> inputs,
                                double step = 1e-6, std::uint64_t weight_seed = 17);

/// Names accepted by grad_check: one per differentiable primitive plus the
/// "softmax_log" composition.
const std::vector<std::string>& gradcheck_primitives();

/// Builds random inputs for the named primitive from `seed` and runs
/// check_gradients. Throws std::invalid_argument for unknown names.
double grad_check(std::string_view primitive, std::uint64_t seed);

/// Gradient check of every parameter of a small dual-decoder network under
/// supervised + rectified loss on 8x8 inputs (2 labeled, 2 unlabeled).
/// With extended_oracle the central differences are evaluated in long double
/// (analytic gradients stay in double), which lowers the roundoff floor of the
/// numeric side for coordinates whose gradient is tiny.
GradCheckReport network_loss_grad_check(std::uint64_t seed, std::size_t depth = 2,
                                        std::size_t base_channels = 4,
                                        bool extended_oracle = false);

}  // namespace dust
