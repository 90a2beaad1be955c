#include "awb/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace awb {

GradCheckResult grad_check(const ScalarFn& f, std::vector<TensorD> inputs, double h) {
  for (auto& x : inputs) {
    if (!x.is_leaf()) throw std::invalid_argument("grad_check: inputs must be leaf tensors");
    x.set_requires_grad(true);
    x.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    TensorD y = f(inputs);
    if (y.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    y.backward();
    for (auto& x : inputs) {
      analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                         : std::vector<double>(x.size(), 0.0));
    }
  }

  std::vector<std::vector<double>> numeric(inputs.size());
  {
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto data = inputs[t].data_mut();
      numeric[t].resize(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double plus = f(inputs).item();
        data[i] = saved - h;
        const double minus = f(inputs).item();
        data[i] = saved;
        numeric[t][i] = (plus - minus) / (2.0 * h);
      }
    }
  }

  double scale = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < analytic[t].size(); ++i) {
      scale = std::max({scale, std::abs(analytic[t][i]), std::abs(numeric[t][i])});
    }
  }
  const double floor = std::max(1e-3 * scale, 1e-12);

  GradCheckResult result;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < analytic[t].size(); ++i) {
      const double a = analytic[t][i], n = numeric[t][i];
      const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      ++result.coordinates;
      if (err > result.max_relative_error || result.coordinates == 1) {
        result.max_relative_error = err;
        result.worst_input = t;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = n;
      }
    }
  }
  for (auto& x : inputs) x.zero_grad();
  return result;
}

}  // namespace awb
