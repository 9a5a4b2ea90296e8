#include <cmath>

#include "doctest.h"
#include "dmcl/errors.hpp"
#include "dmcl/model.hpp"
#include "dmcl/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dmcl;
using namespace dmcl::test;

namespace {

Tensor<double> random_images(std::size_t n, std::size_t side, Rng& rng) {
  Tensor<double> t({n, 3, side, side});
  for (auto& v : t.values()) v = uniform01(rng);
  return t;
}

std::size_t count_kind(const nn::Sequential<float>& s, const std::string& kind) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) n += s[i].kind() == kind;
  return n;
}

// Layer-level check: d sum(w * layer(x)) / dx and / dparams by central differences.
void check_layer(nn::Layer<double>& layer, Tensor<double> x, Rng& rng) {
  Tensor<double> y = layer.forward(x, nn::Mode::kTrain);
  Tensor<double> w(y.shape());
  for (auto& v : w.values()) v = uniform01(rng) - 0.5;
  auto value = [&]() {
    const Tensor<double> out = layer.forward(x, nn::Mode::kTrain);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
    return s;
  };
  std::vector<nn::NamedParameter<double>> params;
  layer.collect("", params);
  for (auto& p : params)
    if (p.param->trainable) p.param->grad.fill(0.0);
  layer.forward(x, nn::Mode::kTrain);
  const Tensor<double> gx = layer.backward(w);
  std::vector<double> xs = x.storage();
  const auto nx = numeric_gradient(xs, [&] {
    x.storage() = xs;
    return value();
  });
  x.storage() = xs;
  CHECK(relative_error(gx.storage(), nx) < 1e-7);
  for (auto& p : params) {
    if (!p.param->trainable) continue;
    std::vector<double> analytic = p.param->grad.storage();
    std::vector<double> v = p.param->value.storage();
    const auto np = numeric_gradient(v, [&] {
      p.param->value.storage() = v;
      return value();
    });
    p.param->value.storage() = v;
    CHECK(relative_error(analytic, np) < 1e-7);
  }
}

}  // namespace

TEST_CASE("grl_backward examples") {
  const std::vector<double> g{1.0, -2.0};
  CHECK(grl_backward(GrlCoupling{1.0}, g) == std::vector<double>{-1.0, 2.0});
  CHECK(grl_backward(GrlCoupling{0.5}, std::vector<double>{4.0}) == std::vector<double>{-2.0});
  for (double v : grl_backward(GrlCoupling{0.0}, std::vector<double>{3.0, -7.0, 0.1}))
    CHECK(v == 0.0);
  Tensor<double> t({3}, 2.0);
  CHECK(GrlCoupling{0.3}.forward(t) == t);
}

TEST_CASE("forward output shapes") {
  ArchitectureConfig a;
  a.conv_channels_g = {4, 8, 8};
  a.conv_channels_branch = {8, 8, 16};
  a.embedding_dims = {16, 16};
  auto model = build_model<double>(a, 1);
  Rng rng(1);
  const auto out = model.forward(random_images(4, 28, rng), nn::Mode::kTrain);
  CHECK(out.toi_logits.shape() == Shape{4, 10});
  CHECK(out.irt_logits.shape() == Shape{4, 10});
  CHECK(out.domain_logits.shape() == Shape{4});
  CHECK(out.domain_prob.shape() == Shape{4});
  CHECK(out.zf.shape() == Shape{4, 16});
  CHECK(out.zd.shape() == Shape{4, 16});
  CHECK_THROWS_AS(model.forward(random_images(2, 20, rng), nn::Mode::kEval), ShapeError);
}

TEST_CASE("domain probability stays strictly inside (0, 1)") {
  auto model = build_model<double>(tiny_arch(8), 5);
  Rng rng(2);
  Tensor<double> x = random_images(1000, 8, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - 0.5) * 50.0 * (i % 7);
  const auto out = model.forward(x, nn::Mode::kTrain);
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(out.domain_prob[i] > 0.0);
    CHECK(out.domain_prob[i] < 1.0);
  }
}

TEST_CASE("initialization is deterministic and structural") {
  ArchitectureConfig a;
  a.conv_channels_g = {32, 64, 128};
  auto m1 = build_model<float>(a, 42), m2 = build_model<float>(a, 42), m3 = build_model<float>(a, 43);
  auto p1 = m1.parameters(), p2 = m2.parameters(), p3 = m3.parameters();
  REQUIRE(p1.size() == p2.size());
  bool differs = false;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].name == p2[i].name);
    CHECK(p1[i].param->value == p2[i].param->value);
    differs = differs || !(p1[i].param->value == p3[i].param->value);
  }
  CHECK(differs);
  CHECK(count_kind(m1.component("g"), "conv2d") == 3);
  CHECK_THROWS_AS(m1.component("h"), ConfigError);
}

TEST_CASE("small-CNN branches are initialized independently") {
  auto m = build_model<float>(tiny_arch(8), 3);
  std::vector<nn::NamedParameter<float>> gf, gd;
  m.component("g_f").collect("", gf);
  m.component("g_d").collect("", gd);
  REQUIRE(gf.size() == gd.size());
  CHECK_FALSE(gf[0].param->value == gd[0].param->value);
}

TEST_CASE("ResNet split starts with identical task and domain branches") {
  ArchitectureConfig a;
  a.backbone = Backbone::kPretrainedResnet50Split;
  a.embedding_dims = {2048, 2048};
  a.input_shape = {32, 32, 3};
  auto m = build_model<float>(a, 9);
  std::vector<nn::NamedParameter<float>> gf, gd;
  m.component("g_f").collect("", gf);
  m.component("g_d").collect("", gd);
  REQUIRE(gf.size() == gd.size());
  REQUIRE(!gf.empty());
  for (std::size_t i = 0; i < gf.size(); ++i) CHECK(gf[i].param->value == gd[i].param->value);
}

TEST_CASE("architecture validation and JSON round-trip") {
  ArchitectureConfig a = tiny_arch(8);
  nlohmann::json j = a;
  CHECK(j.get<ArchitectureConfig>() == a);
  ArchitectureConfig bad = a;
  bad.embedding_dims = {7, 5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = a;
  bad.head_class_counts = {0, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_backbone(to_string(Backbone::kPretrainedResnet50Split)) ==
        Backbone::kPretrainedResnet50Split);
}

TEST_CASE("GRL coefficient 0 removes the domain gradient from g") {
  Rng rng(4);
  auto model = build_model<double>(tiny_arch(8), 6);
  const auto batch = random_adversarial_batch(4, 8, rng);
  model.zero_grad();
  DomainPathPolicy policy;
  policy.reversal = GrlCoupling{0.0};
  AdversarialWeights w;
  w.d = 1.0;
  w.md = 1.0;
  model.backward(adversarial_objective(model, batch, w, nn::Mode::kTrain).grads, policy);
  double g_norm = 0.0, gd_norm = 0.0;
  for (auto& p : model.parameters()) {
    if (!p.param->trainable) continue;
    for (double v : p.param->grad.values()) {
      if (p.name.starts_with("g.")) g_norm += v * v;
      if (p.name.starts_with("g_d.")) gd_norm += v * v;
    }
  }
  CHECK(g_norm == 0.0);
  CHECK(gd_norm > 0.0);
}

TEST_CASE("task and domain branches do not leak into each other") {
  Rng rng(5);
  auto model = build_model<double>(tiny_arch(8), 7);
  const auto batch = random_adversarial_batch(4, 8, rng);
  auto norms = [&](const AdversarialWeights& w) {
    model.zero_grad();
    model.backward(adversarial_objective(model, batch, w, nn::Mode::kTrain).grads,
                   DomainPathPolicy{GrlCoupling{1.0}, true});
    std::map<std::string, double> out;
    for (auto& p : model.parameters()) {
      if (!p.param->trainable) continue;
      const std::string comp = p.name.substr(0, p.name.find('.'));
      for (double v : p.param->grad.values()) out[comp] += v * v;
    }
    return out;
  };
  const auto task = norms({0.0, 0.0, 1.0, 1.0});
  CHECK(task.at("g_d") == 0.0);
  CHECK(task.at("d") == 0.0);
  CHECK(task.at("g_f") > 0.0);
  const auto domain = norms({1.0, 1.0, 0.0, 0.0});
  CHECK(domain.at("g_f") == 0.0);
  CHECK(domain.at("f_r") == 0.0);
  CHECK(domain.at("f_ir") == 0.0);
  CHECK(domain.at("d") > 0.0);
}

TEST_CASE("forward is unaffected by how the domain path is coupled") {
  Rng rng(6);
  auto model = build_model<double>(tiny_arch(8), 8);
  const auto x = random_images(3, 8, rng);
  const auto a = model.forward(x, nn::Mode::kEval);
  const auto b = model.forward(x, nn::Mode::kEval);
  CHECK(a.domain_logits == b.domain_logits);
  CHECK(a.zf == b.zf);
}

TEST_CASE("float and double models agree after a cast") {
  auto mf = build_model<float>(tiny_arch(8), 10);
  auto md = mf.cast<double>();
  Rng rng(7);
  const auto x = random_images(4, 8, rng);
  const auto od = md.forward(x, nn::Mode::kEval);
  const auto of = mf.forward(x.cast<float>(), nn::Mode::kEval);
  for (std::size_t i = 0; i < od.toi_logits.size(); ++i)
    CHECK(of.toi_logits[i] == doctest::Approx(od.toi_logits[i]).epsilon(1e-4));
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(8);
  auto input = [&](Shape s) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = uniform01(rng) - 0.3;
    return t;
  };
  SUBCASE("conv2d") {
    nn::Conv2d<double> c(2, 3, 3, 1, 1, true);
    c.init(rng);
    check_layer(c, input({2, 2, 5, 5}), rng);
  }
  SUBCASE("strided conv2d") {
    nn::Conv2d<double> c(2, 2, 3, 2, 1, false);
    c.init(rng);
    check_layer(c, input({2, 2, 6, 6}), rng);
  }
  SUBCASE("batch norm") {
    nn::BatchNorm2d<double> b(3);
    check_layer(b, input({4, 3, 3, 3}), rng);
  }
  SUBCASE("max pool") {
    nn::MaxPool2d<double> m(2, 2);
    check_layer(m, input({2, 2, 4, 4}), rng);
  }
  SUBCASE("global average pool") {
    nn::GlobalAvgPool<double> g;
    check_layer(g, input({2, 3, 3, 3}), rng);
  }
  SUBCASE("linear") {
    nn::Linear<double> l(5, 4);
    l.init(rng);
    check_layer(l, input({3, 5}), rng);
  }
}
