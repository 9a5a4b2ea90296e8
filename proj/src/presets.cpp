#include "dmcl/presets.hpp"

#include "dmcl/errors.hpp"

namespace dmcl {

namespace {

std::vector<Preset> make_presets() {
  std::vector<Preset> out;

  Preset desk;
  desk.name = "desk";
  desk.description = "small CNN, 28x28 X-NIST, K=64, 1500 iterations";
  desk.arch.conv_channels_g = {8, 16, 16};
  desk.arch.conv_channels_branch = {16, 16, 32};
  desk.arch.embedding_dims = {32, 32};
  desk.train.batch_k = 64;
  desk.train.total_iterations = 1500;
  desk.train.learning_rate = 1e-3;
  out.push_back(desk);

  Preset full;
  full.name = "xnist-full";
  full.description = "small CNN, 28x28 X-NIST, K=64, 7000 iterations, lr 2e-4";
  full.train.total_iterations = 7000;
  out.push_back(full);

  Preset oh;
  oh.name = "office-home";
  oh.description = "ResNet-50 split, 224x224, K=64, 7000 iterations, lr 2e-4";
  oh.arch.backbone = Backbone::kPretrainedResnet50Split;
  oh.arch.embedding_dims = {2048, 2048};
  oh.arch.input_shape = {224, 224, 3};
  oh.arch.head_class_counts = {32, 33};
  oh.train.total_iterations = 7000;
  out.push_back(oh);
  return out;
}

const std::vector<Preset>& all() {
  static const std::vector<Preset> presets = make_presets();
  return presets;
}

}  // namespace

const Preset& preset(std::string_view name) {
  for (const auto& p : all())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : all()) known += (known.empty() ? "" : ", ") + p.name;
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : all()) out.push_back(p.name);
  return out;
}

}  // namespace dmcl
