#pragma once

#include <span>
#include <vector>

#include "dmcl/datasets.hpp"
#include "dmcl/rng.hpp"
#include "dmcl/tensor.hpp"

namespace dmcl {

struct ClassLabel {
  std::size_t class_index = 0;
  Task task = Task::kToi;
};

// lam * xi + (1 - lam) * xj together with both unmixed class labels and the
// interpolated domain label. The classification terms weight left_label by
// lam and right_label by 1 - lam.
struct MixedSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  double lam = 1.0;
  ClassLabel left_label;
  ClassLabel right_label;
  double mixed_domain = 0.0;
};

// out = lam * a + (1 - lam) * b, evaluated in double and rounded once.
void mix_into(std::span<const float> a, std::span<const float> b, double lam, std::span<float> out);

MixedSample dual_mix(const LabeledImage& xi, const LabeledImage& xj, double lam);

// A = M(Xs_r, Xs_ir), B = M(Xs_r, Xt_ir), C = M(Xs_ir, Xt_ir), all with one
// shared lam. Row i of each batch is built from row i of the source batches,
// so (A_i, B_i) share the ToI component and (B_i, C_i) the target-IrT one.
struct ContrastiveTriplet {
  Tensor<float> a;  // K x 3 x H x W
  Tensor<float> b;
  Tensor<float> c;
  double lam = 1.0;

  std::size_t k() const { return a.empty() ? 0 : a.dim(0); }
};

ContrastiveTriplet build_contrastive_triplet(const TripletBatch& tb, double lam);

// Stacks sample pixels into a K x 3 x H x W tensor.
Tensor<float> stack_pixels(const SampleRefs& samples);

// Beta(alpha, alpha) draws for the mixing coefficient.
class BetaSampler {
 public:
  BetaSampler(double alpha, Rng rng);

  double sample();
  double alpha() const { return alpha_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  double alpha_;
  Rng rng_;
};

// One draw from Beta(alpha, alpha) using the caller's engine.
double sample_lambda(double alpha, Rng& rng);

}  // namespace dmcl
