#include "dust/sgd.hpp"

#include <stdexcept>

namespace dust {

template <typename T>
void sgd_step(BasicParamSet<T>& params, BasicSgdState<T>& state) {
  auto& tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].has_grad()) {
      throw std::logic_error("sgd_step: parameter '" + params.names()[i] + "' has no gradient");
    }
  }
  if (state.velocity.empty()) {
    for (const auto& t : tensors) state.velocity.emplace_back(t.numel(), T(0));
  }
  if (state.velocity.size() != tensors.size()) {
    throw std::logic_error("sgd_step: optimizer state tracks " +
                           std::to_string(state.velocity.size()) + " buffers for " +
                           std::to_string(tensors.size()) + " parameters");
  }
  const T lr = static_cast<T>(state.options.learning_rate);
  const T m = static_cast<T>(state.options.momentum);
  const T wd = static_cast<T>(state.options.weight_decay);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto p = tensors[i].data_mut();
    auto g = tensors[i].grad();
    auto& v = state.velocity[i];
    if (v.size() != p.size()) {
      throw std::logic_error("sgd_step: momentum buffer shape mismatch for '" +
                             params.names()[i] + "'");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = m * v[j] + (g[j] + wd * p[j]);
      p[j] -= lr * v[j];
    }
    tensors[i].zero_grad();
  }
}

template void sgd_step(BasicParamSet<float>&, BasicSgdState<float>&);
template void sgd_step(BasicParamSet<double>&, BasicSgdState<double>&);

}  // namespace dust
