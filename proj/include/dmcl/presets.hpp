#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dmcl/model.hpp"
#include "dmcl/trainer.hpp"

namespace dmcl {

struct Preset {
  std::string name;
  std::string description;
  ArchitectureConfig arch;
  TrainConfig train;
};

// desk         small CNN on 28x28 X-NIST, 1500 iterations; the acceptance run
// xnist-full   small CNN, 7000 iterations at lr 2e-4 (long-running)
// office-home  ResNet-50 split on 224x224 images, 7000 iterations (long-running;
//              pretrained weights must be supplied as an archive)
const Preset& preset(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace dmcl
