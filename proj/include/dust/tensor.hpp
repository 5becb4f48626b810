#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dust {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised by any primitive whose operands violate its shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that require it.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Thread-local switch that suppresses graph recording (eval mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Dense row-major tensor with value semantics on the handle: copies share the
/// underlying buffer and graph node, like a shared array reference.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T v) { return BasicTensor(std::move(shape), v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  std::span<T> data_mut();
  T item() const;
  T at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  BasicTensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const T> grad() const;
  /// Allocates a zero gradient buffer if none exists yet.
  std::span<T> grad_mut();
  void zero_grad();

  /// Reverse sweep from a one-element tensor. Gradients of leaves accumulate
  /// across calls; interior gradients are recomputed on every call.
  void backward() const;

  /// Same values, no graph history, requires_grad == false.
  BasicTensor detach() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return BasicTensor<U>(shape(), std::move(out));
  }

  const NodePtr& node() const { return node_; }
  static BasicTensor from_node(NodePtr node) {
    BasicTensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Hard class indices laid out as [batch, height, width].
struct LabelBatch {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  LabelBatch() = default;
  LabelBatch(std::size_t b, std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : batch(b), height(h), width(w), values(b * h * w, fill) {}

  std::size_t pixels() const { return batch * height * width; }
  std::uint8_t& at(std::size_t b, std::size_t y, std::size_t x) {
    return values[(b * height + y) * width + x];
  }
  std::uint8_t at(std::size_t b, std::size_t y, std::size_t x) const {
    return values[(b * height + y) * width + x];
  }
};

}  // namespace dust
