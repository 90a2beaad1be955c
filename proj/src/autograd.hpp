#pragma once

// Helpers shared by op implementations. Not part of the public interface.

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "awb/tensor.hpp"

namespace awb::detail {

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& values);

// Wraps a freshly computed buffer as an op output. When `backward` is set the
// node records its inputs so a later sweep can reach them.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(const std::vector<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (finite_checks()) check_finite(op, node->data);
  if (backward) {
    node->requires_grad = true;
    node->leaf = false;
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.defined() && in.requires_grad()) node->inputs.push_back(in.node());
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_constant(const char* op, Shape shape, std::vector<T> data) {
  return make_result<T>(op, std::move(shape), std::move(data), {}, nullptr);
}

// Gradient accumulator of an input, or nullptr when it does not take one.
template <typename T>
T* grad_of(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return const_cast<Tensor<T>&>(t).grad_buffer().data();
}

[[noreturn]] inline void invalid(const std::string& what) { throw std::invalid_argument(what); }

}  // namespace awb::detail
