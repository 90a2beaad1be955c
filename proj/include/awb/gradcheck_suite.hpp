#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "awb/gradcheck.hpp"

namespace awb {

struct GradSuiteOptions {
  std::size_t instances = 20;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 2024;
  std::string filter;  // substring match on case names; empty runs all
};

struct GradSuiteEntry {
  std::string name;
  std::size_t instances = 0;
  double worst_error = 0.0;  // largest relative error over all instances
  std::size_t coordinates = 0;
  bool passed = false;
};

/// Names of every case, in run order.
std::vector<std::string> gradcheck_case_names();

/// Double-precision central-difference checks of every differentiable op, the
/// attention units, both AWB orders, the losses and a small end-to-end network.
/// Each instance draws fresh inputs and a fresh random projection of the
/// output, so the checked scalar is sum(R * f(x)).
std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& options = {});

}  // namespace awb
