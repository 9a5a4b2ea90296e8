#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "dmcl/rng.hpp"
#include "dmcl/tensor.hpp"

namespace dmcl::nn {

enum class Mode { kTrain, kEval };

// A learnable tensor with its gradient accumulator. Non-trainable entries
// (batch-norm running statistics) are carried for checkpointing only.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  explicit Parameter(Shape shape, bool is_trainable = true)
      : value(shape), grad(is_trainable ? shape : Shape{0}), trainable(is_trainable) {}
};

template <typename T>
struct NamedParameter {
  std::string name;
  Parameter<T>* param;
};

// Layers cache whatever they need from forward() so that the next
// backward() call can produce input gradients and accumulate parameter
// gradients. One forward must precede each backward.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) {
    (void)prefix;
    (void)out;
  }
  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer<T>> clone() const = 0;
  // Drops cached activations.
  virtual void release() {}
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride = 1, std::size_t padding = 0, bool bias = false);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  std::string kind() const override { return "conv2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
  void release() override { col_ = {}; }

  // He-normal weights (ReLU gain), zero bias.
  void init(Rng& rng);

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  // Off for a layer that reads the network input: backward() then only
  // accumulates parameter gradients and returns an empty tensor.
  void set_input_grad(bool on) { input_grad_ = on; }

 private:
  std::size_t in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  bool input_grad_ = true;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Shape in_shape_;
  std::size_t out_h_ = 0, out_w_ = 0;
  std::vector<T> col_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  std::string kind() const override { return "batchnorm2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  void release() override { xhat_ = {}; }

 private:
  std::size_t channels_;
  double momentum_, eps_;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  bool last_train_ = false;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
  void release() override { mask_ = {}; }

 private:
  std::vector<unsigned char> mask_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding = 0)
      : kernel_(kernel), stride_(stride), padding_(padding) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  std::string kind() const override { return "maxpool2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  void release() override { argmax_ = {}; }

 private:
  std::size_t kernel_, stride_, padding_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

// N x C x H x W -> N x C.
template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  std::string kind() const override { return "global_avg_pool"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  Shape in_shape_;
};

// N x in -> N x out. Weight is out x in.
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }
  void release() override { input_ = {}; }

  // U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init(Rng& rng);

 private:
  std::size_t in_, out_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

// Ordered container; also the unit a model component is built from.
template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void add_layer(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  std::string kind() const override { return "sequential"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sequential>(*this); }
  void release() override;

  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }
  const Layer<T>& operator[](std::size_t i) const { return *layers_[i]; }
  std::size_t count(const std::string& kind) const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// ResNet bottleneck block: 1x1 -> 3x3(stride) -> 1x1 (x4 expansion) with an
// identity or projection shortcut, followed by ReLU.
template <typename T>
class Bottleneck final : public Layer<T> {
 public:
  Bottleneck(std::size_t in_channels, std::size_t width, std::size_t stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(const std::string& prefix, std::vector<NamedParameter<T>>& out) override;
  std::string kind() const override { return "bottleneck"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Bottleneck>(*this); }
  void release() override;

 private:
  Sequential<T> main_;
  Sequential<T> shortcut_;  // empty: identity
  ReLU<T> out_relu_;
};

// Dense matrix product helpers over BLAS: C = alpha * op(A) * op(B) + beta * C
// for row-major A (m x k after op), B (k x n after op), C (m x n).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, const T* b, T beta, T* c);

}  // namespace dmcl::nn
