#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmcl/layers.hpp"
#include "dmcl/tensor.hpp"
#include "json.hpp"

namespace dmcl {

enum class Backbone { kSmallCnn, kPretrainedResnet50Split };

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view name);

struct ArchitectureConfig {
  Backbone backbone = Backbone::kSmallCnn;
  std::array<std::size_t, 3> conv_channels_g{32, 64, 64};
  std::array<std::size_t, 3> conv_channels_branch{64, 64, 128};
  // (m_f, m_d); for the small CNN both equal conv_channels_branch[2], for the
  // ResNet split both are 2048.
  std::array<std::size_t, 2> embedding_dims{128, 128};
  std::array<std::size_t, 3> input_shape{28, 28, 3};  // H, W, C
  std::array<std::size_t, 2> head_class_counts{10, 10};  // |C^r|, |C^ir|
  // Optional parameter archive for the ResNet split (see load_backbone_weights).
  std::string pretrained_weights;

  void validate() const;
  bool operator==(const ArchitectureConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchitectureConfig& c);
void from_json(const nlohmann::json& j, ArchitectureConfig& c);

// Identity on the forward pass; multiplies gradients by -coefficient on the
// way back.
struct GrlCoupling {
  double coefficient = 1.0;

  template <typename T>
  Tensor<T> forward(const Tensor<T>& x) const {
    return x;
  }
  template <typename T>
  Tensor<T> backward(const Tensor<T>& upstream) const {
    Tensor<T> g(upstream.shape());
    const double s = -coefficient;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(s * upstream[i]);
    return g;
  }
};

std::vector<double> grl_backward(const GrlCoupling& grl, std::span<const double> upstream);

template <typename T>
struct ModelOutputs {
  Tensor<T> toi_logits;     // N x |C^r|
  Tensor<T> irt_logits;     // N x |C^ir|
  Tensor<T> domain_logits;  // N
  Tensor<T> domain_prob;    // N, sigmoid of domain_logits
  Tensor<T> zf;             // N x m_f, task embedding g_f(g(x))
  Tensor<T> zd;             // N x m_d, domain embedding g_d(g(x))
};

// Gradients of a scalar objective with respect to the model outputs. Empty
// tensors stand for zero.
template <typename T>
struct OutputGradients {
  Tensor<T> toi_logits;
  Tensor<T> irt_logits;
  Tensor<T> domain_logits;
  Tensor<T> zf;
  Tensor<T> zd;
};

// How gradients from the domain branch enter the shared extractor.
struct DomainPathPolicy {
  // Set: the branch sits behind this gradient-reversal coupling.
  std::optional<GrlCoupling> reversal;
  // False: g receives no gradient at all (frozen for this pass).
  bool propagate_into_shared = true;
};

// The six components of the network:
//   g (shared) -> g_f -> {f_r, f_ir}   (task side)
//   g (shared) -> [GRL] -> g_d -> d    (domain side)
template <typename T>
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(ArchitectureConfig config, nn::Sequential<T> g, nn::Sequential<T> g_f,
              nn::Sequential<T> g_d, nn::Sequential<T> f_r, nn::Sequential<T> f_ir,
              nn::Sequential<T> d);

  // batch: N x 3 x H x W.
  ModelOutputs<T> forward(const Tensor<T>& batch, nn::Mode mode);
  // Accumulates parameter gradients for the most recent forward().
  void backward(const OutputGradients<T>& grads, const DomainPathPolicy& policy);

  // Named parameters in a fixed order: g, g_f, g_d, f_r, f_ir, d.
  std::vector<nn::NamedParameter<T>> parameters();
  void zero_grad();
  std::size_t parameter_count(const std::string& component) const;
  void release();

  const ArchitectureConfig& config() const { return config_; }
  nn::Sequential<T>& component(const std::string& name);
  const nn::Sequential<T>& component(const std::string& name) const;

  template <typename U>
  ModelBundle<U> cast() const;

 private:
  ArchitectureConfig config_;
  nn::Sequential<T> g_, g_f_, g_d_, f_r_, f_ir_, d_;
  Shape shared_shape_;
};

// Deterministic under `seed`. For the small CNN, g_f and g_d share an
// architecture but are initialized independently; for the ResNet split, g_d
// starts as an exact copy of g_f (both stage 4).
template <typename T>
ModelBundle<T> build_model(const ArchitectureConfig& cfg, std::uint64_t seed);

}  // namespace dmcl
