#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace awb {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const std::vector<T>&)> backward;
};

}  // namespace detail

// Dense row-major tensor. Copies are handles onto the same storage and graph
// node, which is what lets parameters, optimizers and the autodiff graph refer
// to one buffer. Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();  // undefined handle; see defined()
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const T> data() const;
  std::span<T> data_mut();
  T item() const;
  T at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const T> grad() const;
  std::vector<T>& grad_buffer();  // zero-filled on first access
  void zero_grad();  // releases the accumulator; has_grad() is false until the next sweep

  /// Reverse sweep from this scalar; gradients accumulate into every leaf that
  /// requires them. Interior gradients are released as the sweep proceeds.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // non-differentiable view copy

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  template <typename U>
  Tensor<U> cast() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// A parameter or buffer handle together with its dotted path inside a model.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

bool grad_enabled();

// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When on (the default) every op output is scanned and a NumericError is thrown
// on the first non-finite value.
void set_finite_checks(bool on);
bool finite_checks();

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace awb
