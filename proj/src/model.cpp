#include "dmcl/model.hpp"

#include <cmath>

#include "dmcl/errors.hpp"
#include "dmcl/rng.hpp"

namespace dmcl {

std::string_view to_string(Backbone b) {
  return b == Backbone::kSmallCnn ? "SMALL_CNN" : "PRETRAINED_RESNET50_SPLIT";
}

Backbone parse_backbone(std::string_view name) {
  if (name == "SMALL_CNN") return Backbone::kSmallCnn;
  if (name == "PRETRAINED_RESNET50_SPLIT") return Backbone::kPretrainedResnet50Split;
  throw ConfigError("unknown backbone '" + std::string(name) + "'");
}

void ArchitectureConfig::validate() const {
  const auto [h, w, c] = input_shape;
  if (c != 3) throw ConfigError("input images must have 3 channels");
  if (head_class_counts[0] == 0 || head_class_counts[1] == 0)
    throw ConfigError("both classification heads need at least one class");
  if (backbone == Backbone::kSmallCnn) {
    if (h < 8 || w < 8) throw ShapeError("SMALL_CNN needs inputs of at least 8x8");
    for (auto ch : conv_channels_g)
      if (ch == 0) throw ConfigError("conv_channels_g entries must be positive");
    for (auto ch : conv_channels_branch)
      if (ch == 0) throw ConfigError("conv_channels_branch entries must be positive");
    if (embedding_dims[0] != conv_channels_branch[2] || embedding_dims[1] != conv_channels_branch[2])
      throw ConfigError("SMALL_CNN embedding dims must equal the last branch channel count (" +
                        std::to_string(conv_channels_branch[2]) + ")");
  } else {
    if (h < 32 || w < 32)
      throw ShapeError("PRETRAINED_RESNET50_SPLIT needs inputs of at least 32x32, got " +
                       std::to_string(h) + "x" + std::to_string(w));
    if (embedding_dims[0] != 2048 || embedding_dims[1] != 2048)
      throw ConfigError("PRETRAINED_RESNET50_SPLIT embedding dims are 2048");
  }
}

void to_json(nlohmann::json& j, const ArchitectureConfig& c) {
  j = nlohmann::json{{"backbone", std::string(to_string(c.backbone))},
                     {"conv_channels_g", c.conv_channels_g},
                     {"conv_channels_branch", c.conv_channels_branch},
                     {"embedding_dims", c.embedding_dims},
                     {"input_shape", c.input_shape},
                     {"head_class_counts", c.head_class_counts},
                     {"pretrained_weights", c.pretrained_weights}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& c) {
  ArchitectureConfig d;
  c.backbone = parse_backbone(j.value("backbone", std::string(to_string(d.backbone))));
  c.conv_channels_g = j.value("conv_channels_g", d.conv_channels_g);
  c.conv_channels_branch = j.value("conv_channels_branch", d.conv_channels_branch);
  c.embedding_dims = j.value("embedding_dims", d.embedding_dims);
  c.input_shape = j.value("input_shape", d.input_shape);
  c.head_class_counts = j.value("head_class_counts", d.head_class_counts);
  c.pretrained_weights = j.value("pretrained_weights", std::string());
}

std::vector<double> grl_backward(const GrlCoupling& grl, std::span<const double> upstream) {
  Tensor<double> t({upstream.size()}, std::vector<double>(upstream.begin(), upstream.end()));
  return grl.backward(t).storage();
}

template <typename T>
ModelBundle<T>::ModelBundle(ArchitectureConfig config, nn::Sequential<T> g, nn::Sequential<T> g_f,
                            nn::Sequential<T> g_d, nn::Sequential<T> f_r, nn::Sequential<T> f_ir,
                            nn::Sequential<T> d)
    : config_(std::move(config)), g_(std::move(g)), g_f_(std::move(g_f)), g_d_(std::move(g_d)),
      f_r_(std::move(f_r)), f_ir_(std::move(f_ir)), d_(std::move(d)) {}

template <typename T>
ModelOutputs<T> ModelBundle<T>::forward(const Tensor<T>& batch, nn::Mode mode) {
  const auto [h, w, c] = config_.input_shape;
  if (batch.rank() != 4 || batch.dim(1) != c || batch.dim(2) != h || batch.dim(3) != w)
    throw ShapeError("model expects N x " + std::to_string(c) + " x " + std::to_string(h) + " x " +
                     std::to_string(w) + " input, got " + shape_string(batch.shape()));
  ModelOutputs<T> out;
  const Tensor<T> shared = g_.forward(batch, mode);
  shared_shape_ = shared.shape();
  out.zf = g_f_.forward(shared, mode);
  out.zd = g_d_.forward(GrlCoupling{}.forward(shared), mode);
  out.toi_logits = f_r_.forward(out.zf, mode);
  out.irt_logits = f_ir_.forward(out.zf, mode);
  out.domain_logits = d_.forward(out.zd, mode);
  out.domain_logits.reshape({batch.dim(0)});
  out.domain_prob = Tensor<T>(out.domain_logits.shape());
  for (std::size_t i = 0; i < out.domain_logits.size(); ++i)
    out.domain_prob[i] = static_cast<T>(1.0 / (1.0 + std::exp(-double(out.domain_logits[i]))));
  return out;
}

template <typename T>
void ModelBundle<T>::backward(const OutputGradients<T>& grads, const DomainPathPolicy& policy) {
  if (shared_shape_.empty()) throw ShapeError("backward called before forward");
  Tensor<T> shared_grad(shared_shape_);
  bool any = false;

  auto accumulate = [](Tensor<T>& into, const Tensor<T>& add) {
    if (into.empty()) {
      into = add;
      return;
    }
    if (into.shape() != add.shape()) throw ShapeError("gradient shape mismatch");
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += add[i];
  };

  Tensor<T> gzf = grads.zf;
  if (!grads.toi_logits.empty()) accumulate(gzf, f_r_.backward(grads.toi_logits));
  if (!grads.irt_logits.empty()) accumulate(gzf, f_ir_.backward(grads.irt_logits));
  if (!gzf.empty()) {
    accumulate(shared_grad, g_f_.backward(gzf));
    any = true;
  }

  Tensor<T> gzd = grads.zd;
  if (!grads.domain_logits.empty()) {
    Tensor<T> gl = grads.domain_logits;
    gl.reshape({gl.size(), 1});
    accumulate(gzd, d_.backward(gl));
  }
  if (!gzd.empty()) {
    Tensor<T> gd = g_d_.backward(gzd);
    if (policy.reversal) gd = policy.reversal->backward(gd);
    accumulate(shared_grad, gd);
    any = true;
  }

  if (any && policy.propagate_into_shared) g_.backward(shared_grad);
}

template <typename T>
std::vector<nn::NamedParameter<T>> ModelBundle<T>::parameters() {
  std::vector<nn::NamedParameter<T>> out;
  g_.collect("g.", out);
  g_f_.collect("g_f.", out);
  g_d_.collect("g_d.", out);
  f_r_.collect("f_r.", out);
  f_ir_.collect("f_ir.", out);
  d_.collect("d.", out);
  return out;
}

template <typename T>
void ModelBundle<T>::zero_grad() {
  for (auto& p : parameters())
    if (p.param->trainable) p.param->grad.fill(T(0));
}

template <typename T>
std::size_t ModelBundle<T>::parameter_count(const std::string& component_name) const {
  auto& self = const_cast<ModelBundle<T>&>(*this);
  std::vector<nn::NamedParameter<T>> out;
  self.component(component_name).collect("", out);
  std::size_t n = 0;
  for (const auto& p : out)
    if (p.param->trainable) n += p.param->value.size();
  return n;
}

template <typename T>
void ModelBundle<T>::release() {
  for (auto* s : {&g_, &g_f_, &g_d_, &f_r_, &f_ir_, &d_}) s->release();
}

template <typename T>
nn::Sequential<T>& ModelBundle<T>::component(const std::string& name) {
  if (name == "g") return g_;
  if (name == "g_f") return g_f_;
  if (name == "g_d") return g_d_;
  if (name == "f_r") return f_r_;
  if (name == "f_ir") return f_ir_;
  if (name == "d") return d_;
  throw ConfigError("unknown model component '" + name + "'");
}

template <typename T>
const nn::Sequential<T>& ModelBundle<T>::component(const std::string& name) const {
  return const_cast<ModelBundle<T>&>(*this).component(name);
}

template <typename T>
template <typename U>
ModelBundle<U> ModelBundle<T>::cast() const {
  ModelBundle<U> out = build_model<U>(config_, 0);
  auto src = const_cast<ModelBundle<T>&>(*this).parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto& v = src[i].param->value;
    dst[i].param->value = v.template cast<U>();
  }
  return out;
}

namespace {

constexpr std::uint64_t kInitStream = 0x1417;

template <typename T>
void add_conv_block(nn::Sequential<T>& seq, std::size_t in, std::size_t out, std::size_t& h,
                    std::size_t& w, Rng& rng, bool reads_input = false) {
  auto& conv = seq.template add<nn::Conv2d<T>>(in, out, 3, 1, 1);
  conv.init(rng);
  conv.set_input_grad(!reads_input);
  seq.template add<nn::BatchNorm2d<T>>(out);
  seq.template add<nn::ReLU<T>>();
  // Pool while the map is still large enough to halve meaningfully.
  if (h >= 4 && w >= 4) {
    seq.template add<nn::MaxPool2d<T>>(2, 2);
    h /= 2;
    w /= 2;
  }
}

template <typename T>
nn::Sequential<T> linear_head(std::size_t in, std::size_t out, Rng& rng) {
  nn::Sequential<T> s;
  s.template add<nn::Linear<T>>(in, out).init(rng);
  return s;
}

template <typename T>
void add_resnet_stage(nn::Sequential<T>& seq, std::size_t& in, std::size_t width,
                      std::size_t blocks, std::size_t stride, Rng& rng) {
  for (std::size_t b = 0; b < blocks; ++b) {
    seq.template add<nn::Bottleneck<T>>(in, width, b == 0 ? stride : 1, rng);
    in = 4 * width;
  }
}

}  // namespace

template <typename T>
ModelBundle<T> build_model(const ArchitectureConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Sequential<T> g, g_f, g_d;
  const auto [h0, w0, c0] = cfg.input_shape;
  if (cfg.backbone == Backbone::kSmallCnn) {
    Rng rng_g(derive_seed(seed, kInitStream, 0));
    std::size_t h = h0, w = w0, in = c0;
    for (std::size_t ch : cfg.conv_channels_g) {
      add_conv_block(g, in, ch, h, w, rng_g, g.size() == 0);
      in = ch;
    }
    auto branch = [&](std::uint64_t stream) {
      Rng rng(derive_seed(seed, kInitStream, stream));
      nn::Sequential<T> s;
      std::size_t bh = h, bw = w, bin = in;
      for (std::size_t ch : cfg.conv_channels_branch) {
        add_conv_block(s, bin, ch, bh, bw, rng);
        bin = ch;
      }
      s.template add<nn::GlobalAvgPool<T>>();
      return s;
    };
    g_f = branch(1);
    g_d = branch(2);
  } else {
    Rng rng(derive_seed(seed, kInitStream, 0));
    auto& stem = g.template add<nn::Conv2d<T>>(3, 64, 7, 2, 3);
    stem.init(rng);
    stem.set_input_grad(false);
    g.template add<nn::BatchNorm2d<T>>(64);
    g.template add<nn::ReLU<T>>();
    g.template add<nn::MaxPool2d<T>>(3, 2, 1);
    std::size_t in = 64;
    add_resnet_stage(g, in, 64, 3, 1, rng);
    add_resnet_stage(g, in, 128, 4, 2, rng);
    add_resnet_stage(g, in, 256, 6, 2, rng);
    Rng rng4(derive_seed(seed, kInitStream, 1));
    add_resnet_stage(g_f, in, 512, 3, 2, rng4);
    g_f.template add<nn::GlobalAvgPool<T>>();
    g_d = g_f;  // stage 4 copied into both branches
  }
  Rng rng_heads(derive_seed(seed, kInitStream, 3));
  auto f_r = linear_head<T>(cfg.embedding_dims[0], cfg.head_class_counts[0], rng_heads);
  auto f_ir = linear_head<T>(cfg.embedding_dims[0], cfg.head_class_counts[1], rng_heads);
  auto d = linear_head<T>(cfg.embedding_dims[1], 1, rng_heads);
  return ModelBundle<T>(cfg, std::move(g), std::move(g_f), std::move(g_d), std::move(f_r),
                        std::move(f_ir), std::move(d));
}

template class ModelBundle<float>;
template class ModelBundle<double>;
template ModelBundle<float> build_model<float>(const ArchitectureConfig&, std::uint64_t);
template ModelBundle<double> build_model<double>(const ArchitectureConfig&, std::uint64_t);
template ModelBundle<double> ModelBundle<float>::cast<double>() const;
template ModelBundle<float> ModelBundle<double>::cast<float>() const;
template ModelBundle<float> ModelBundle<float>::cast<float>() const;
template ModelBundle<double> ModelBundle<double>::cast<double>() const;

}  // namespace dmcl
