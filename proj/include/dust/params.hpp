#pragma once

#include <stdexcept>
#include <utility>
#include <string>
#include <string_view>
#include <vector>

#include "dust/tensor.hpp"

namespace dust {

/// Ordered, named collection of trainable tensors. Registration order is the
/// serialization order and the order the optimizer walks.
template <typename T>
class BasicParamSet {
 public:
  BasicTensor<T>& add(std::string name, BasicTensor<T> tensor) {
    if (has(name)) throw std::invalid_argument("parameter registered twice: " + name);
    tensor.set_requires_grad(true);
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(tensor));
    return tensors_.back();
  }

  bool has(std::string_view name) const { return index_of(name) < names_.size(); }

  const BasicTensor<T>& get(std::string_view name) const {
    const auto i = index_of(name);
    if (i == names_.size()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return tensors_[i];
  }
  BasicTensor<T>& get(std::string_view name) {
    return const_cast<BasicTensor<T>&>(std::as_const(*this).get(name));
  }

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  /// Deep copy with fresh leaves (no shared buffers, no gradients).
  template <typename U = T>
  BasicParamSet<U> clone_as() const {
    BasicParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

 private:
  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return names_.size();
  }

  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
};

using ParamSet = BasicParamSet<float>;

}  // namespace dust
