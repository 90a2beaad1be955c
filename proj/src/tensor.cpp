#include "awb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "autograd.hpp"
#include "awb/errors.hpp"

namespace awb {

namespace {
thread_local bool t_grad_enabled = true;
bool g_finite_checks = true;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

namespace detail {

template <typename T>
void check_finite(const char* op, const std::vector<T>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at element " +
                         std::to_string(i));
    }
  }
}

template void check_finite<float>(const char*, const std::vector<float>&);
template void check_finite<double>(const char*, const std::vector<double>&);

}  // namespace detail

template <typename T>
Tensor<T>::Tensor() = default;

namespace {
const Shape kNoShape{};
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + to_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return node_ ? node_->shape : kNoShape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape().size()) {
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for " +
                                to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return node_ ? node_->data.size() : 0;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) return {};
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::data_mut() {
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw std::invalid_argument("item: tensor of shape " + to_string(node_->shape) +
                                " is not a scalar");
  }
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_->leaf) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return node_->leaf;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node_->grad;
}

template <typename T>
std::vector<T>& Tensor<T>::grad_buffer() {
  if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T{0});
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() const {
  if (node_->data.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got " + to_string(node_->shape));
  }
  if (!node_->requires_grad) throw std::logic_error("backward: root does not require grad");

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  using NodePtr = detail::Node<T>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      NodePtr child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr n = *it;
    if (n->leaf) continue;
    if (n->grad.empty()) continue;  // nothing flowed here
    n->backward(n->grad);
    if (n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  if (!node_) return {};
  Tensor out(node_->shape, node_->data);
  out.node_->requires_grad = node_->leaf && node_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), node_->data);
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(node_->data.begin(), node_->data.end());
  return Tensor<U>(node_->shape, std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;

}  // namespace awb
