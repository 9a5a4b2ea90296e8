#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmcl/layers.hpp"

namespace dmcl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-parameter state keyed by parameter name. Parameters left out
// of a step() call keep their state untouched, which is how a pass that only
// reaches part of the network (the contrastive step) is applied.
template <typename T>
class Adam {
 public:
  struct Slot {
    Tensor<T> m;
    Tensor<T> v;
    std::size_t steps = 0;
  };

  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<nn::NamedParameter<T>>& params, double lr);

  const AdamConfig& config() const { return cfg_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
};

}  // namespace dmcl
