#include "dmcl/optim.hpp"

#include <cmath>

namespace dmcl {

template <typename T>
void Adam<T>::step(const std::vector<nn::NamedParameter<T>>& params, double lr) {
  for (const auto& np : params) {
    auto& p = *np.param;
    if (!p.trainable) continue;
    auto [it, fresh] = slots_.try_emplace(np.name);
    Slot& s = it->second;
    if (fresh) {
      s.m = Tensor<T>(p.value.shape());
      s.v = Tensor<T>(p.value.shape());
    }
    ++s.steps;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(s.steps));
    const double c2 = 1.0 - std::pow(b2, double(s.steps));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = b1 * s.m[i] + (1.0 - b1) * g;
      const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
      s.m[i] = static_cast<T>(m);
      s.v[i] = static_cast<T>(v);
      p.value[i] = static_cast<T>(p.value[i] - lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dmcl
