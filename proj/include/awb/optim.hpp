#pragma once

#include <cstddef>
#include <vector>

#include "awb/tensor.hpp"

namespace awb {

struct AdamConfig {
  double lr = 3.5e-4;
  double beta1 = 0.0;  // momentum-free by default
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // L2 term added to the gradient

  void validate() const;
};

// Adam-style adaptive step over a fixed parameter list. Moments are kept in
// double. Parameters without a gradient this step are left untouched.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedTensor<T>> params, AdamConfig config);

  void step();
  void zero_grad();
  /// Forgets the moments of one parameter (used when its values are replaced).
  void reset(const Tensor<T>& param);

  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }

 private:
  struct Slot {
    NamedTensor<T> param;
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  std::vector<Slot> slots_;
  AdamConfig config_;
  std::size_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace awb
