#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "awb/tensor.hpp"

namespace awb {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Compares the reverse-mode gradient of scalar `f` at `inputs` with central
/// differences (f(x+h) - f(x-h)) / 2h, one coordinate at a time. Inputs must be
/// leaves; they are flagged as requiring grad and restored bit-exactly afterwards.
/// The per-coordinate error is |a - n| / max(|a|, |n|, floor) where the floor is
/// 1e-3 of the largest gradient magnitude seen, so coordinates that are tiny
/// relative to the whole gradient are judged on the gradient's scale.
GradCheckResult grad_check(const ScalarFn& f, std::vector<TensorD> inputs, double h = 1e-5);

}  // namespace awb
