#include "dmcl/mixup.hpp"

#include <cmath>
#include <random>

#include "dmcl/errors.hpp"

namespace dmcl {

void mix_into(std::span<const float> a, std::span<const float> b, double lam, std::span<float> out) {
  if (a.size() != b.size() || out.size() != a.size())
    throw ShapeError("mixup operands have different sizes");
  const double rest = 1.0 - lam;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = static_cast<float>(lam * double(a[i]) + rest * double(b[i]));
}

namespace {

void check_lam(double lam) {
  if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("mixing coefficient must lie in [0, 1]");
}

}  // namespace

MixedSample dual_mix(const LabeledImage& xi, const LabeledImage& xj, double lam) {
  check_lam(lam);
  if (xi.height != xj.height || xi.width != xj.width || xi.pixels.size() != xj.pixels.size())
    throw ShapeError("dual_mix: samples have different shapes");
  MixedSample m;
  m.height = xi.height;
  m.width = xi.width;
  m.pixels.resize(xi.pixels.size());
  mix_into(xi.pixels, xj.pixels, lam, m.pixels);
  m.lam = lam;
  m.left_label = {xi.class_index, xi.task};
  m.right_label = {xj.class_index, xj.task};
  m.mixed_domain = lam * xi.domain_label + (1.0 - lam) * xj.domain_label;
  return m;
}

Tensor<float> stack_pixels(const SampleRefs& samples) {
  if (samples.empty()) return {};
  const LabeledImage& first = samples.front();
  Tensor<float> t({samples.size(), 3, first.height, first.width});
  const std::size_t row = t.stride0();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const LabeledImage& s = samples[i];
    if (s.pixels.size() != row) throw ShapeError("stack_pixels: inconsistent sample shapes");
    std::copy(s.pixels.begin(), s.pixels.end(), t.data() + i * row);
  }
  return t;
}

ContrastiveTriplet build_contrastive_triplet(const TripletBatch& tb, double lam) {
  check_lam(lam);
  tb.validate();
  const Tensor<float> sr = stack_pixels(tb.xs_r);
  const Tensor<float> sir = stack_pixels(tb.xs_ir);
  const Tensor<float> tir = stack_pixels(tb.xt_ir);
  if (sr.shape() != sir.shape() || sr.shape() != tir.shape())
    throw ShapeError("triplet batches have different image shapes");
  ContrastiveTriplet t{Tensor<float>(sr.shape()), Tensor<float>(sr.shape()),
                       Tensor<float>(sr.shape()), lam};
  mix_into(sr.values(), sir.values(), lam, t.a.values());
  mix_into(sr.values(), tir.values(), lam, t.b.values());
  mix_into(sir.values(), tir.values(), lam, t.c.values());
  return t;
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("Beta parameter alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) return uniform01(rng) < 0.5 ? 0.0 : 1.0;  // both underflowed (tiny alpha)
  return x / (x + y);
}

BetaSampler::BetaSampler(double alpha, Rng rng) : alpha_(alpha), rng_(std::move(rng)) {
  if (!(alpha > 0.0)) throw ConfigError("Beta parameter alpha must be positive");
}

double BetaSampler::sample() { return sample_lambda(alpha_, rng_); }

}  // namespace dmcl
