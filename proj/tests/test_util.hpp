#pragma once

#include <cmath>
#include <vector>

#include "awb/rng.hpp"
#include "awb/tensor.hpp"

namespace awb::test {

template <typename T = double>
Tensor<T> randn(RngStream& rng, Shape shape, double sd = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data_mut()) v = static_cast<T>(sd * rng.normal());
  return t;
}

template <typename T = double>
Tensor<T> randu(RngStream& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data_mut()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.at(i) != b.at(i)) return false;
  }
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.at(i)) - double(b.at(i))));
  return m;
}

}  // namespace awb::test
