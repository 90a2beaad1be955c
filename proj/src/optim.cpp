#include "awb/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace awb {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("adam: eps > 0 and weight_decay >= 0 required");
}

template <typename T>
Adam<T>::Adam(std::vector<NamedTensor<T>> params, AdamConfig config) : config_(config) {
  config_.validate();
  for (auto& p : params) {
    if (!p.tensor.is_leaf()) throw std::invalid_argument("adam: parameter " + p.name + " is not a leaf");
    Slot s;
    s.param = p;
    s.m.assign(p.tensor.size(), 0.0);
    s.v.assign(p.tensor.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  for (auto& s : slots_) {
    if (!s.param.tensor.has_grad()) continue;
    ++s.t;
    const auto g = s.param.tensor.grad();
    auto w = s.param.tensor.data_mut();
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + config_.weight_decay * static_cast<double>(w[i]);
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = config_.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config_.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& s : slots_) s.param.tensor.zero_grad();
}

template <typename T>
void Adam<T>::reset(const Tensor<T>& param) {
  for (auto& s : slots_) {
    if (s.param.tensor.same_storage(param)) {
      s.m.assign(s.m.size(), 0.0);
      s.v.assign(s.v.size(), 0.0);
      s.t = 0;
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace awb
