#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dmcl/tensor.hpp"

namespace dmcl {

// Values of every objective for one training iteration. l_d and l_md are
// log-likelihoods (non-positive; the domain branch maximizes them), l_f and
// l_mf are cross-entropies.
struct LossReport {
  double l_d = 0.0;
  double l_md = 0.0;
  double l_f = 0.0;
  double l_mf = 0.0;
  double l_adv = 0.0;  // l_d + l_md + l_f + l_mf
  double l_con_d = 0.0;
  double l_con_f = 0.0;
  std::size_t saturated = 0;  // probabilities clamped this iteration
};

inline constexpr double kProbabilityEpsilon = 1e-7;

// Counts probabilities that had to be clamped into [eps, 1 - eps].
struct SaturationCounter {
  std::size_t count = 0;
};

// ---- domain terms ----

// mean_s log(1 - p_s) + mean_t log(p_t).
double domain_loss(std::span<const double> source_probs, std::span<const double> target_probs,
                   SaturationCounter* saturation = nullptr);

struct MixedProbability {
  double prob;
  double lam;
};

// mean_i lam_i log(1 - p_i) + (1 - lam_i) log(p_i).
double mixed_domain_loss(std::span<const MixedProbability> samples,
                         SaturationCounter* saturation = nullptr);

// Value plus gradient with respect to the domain logits z (p = sigmoid(z)).
// The gradient is that of the unclamped expression, (1 - w) - p per sample
// for weight w on log(1 - p), divided by the group size.
struct DomainTerm {
  double value = 0.0;
  std::vector<double> grad_source;  // d value / d z, source samples
  std::vector<double> grad_target;
};

DomainTerm domain_loss_with_grad(std::span<const double> source_probs,
                                 std::span<const double> target_probs,
                                 SaturationCounter* saturation = nullptr);

struct MixedDomainTerm {
  double value = 0.0;
  std::vector<double> grad;  // d value / d z
};

MixedDomainTerm mixed_domain_loss_with_grad(std::span<const MixedProbability> samples,
                                            SaturationCounter* saturation = nullptr);

// ---- classification terms ----

template <typename T>
struct CrossEntropyTerm {
  double value = 0.0;
  Tensor<T> grad;  // d value / d logits
};

// Mean cross-entropy of N x C logits against class indices. `weights`, when
// given, scales each sample's term (the mean still divides by N).
template <typename T>
CrossEntropyTerm<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets,
                                  std::span<const double> weights = {});

template <typename T>
struct TaskTerm {
  double value = 0.0;
  Tensor<T> grad_toi;
  Tensor<T> grad_irt;
};

// CE of the ToI head on source-ToI samples plus CE of the IrT head on IrT
// samples (both domains).
template <typename T>
TaskTerm<T> task_loss(const Tensor<T>& toi_logits, std::span<const std::size_t> toi_targets,
                      const Tensor<T>& irt_logits, std::span<const std::size_t> irt_targets);

// mean_i lam_i CE(toi_i, left_i) + (1 - lam_i) CE(irt_i, right_i). Row i of
// both logit tensors belongs to mixed sample i.
template <typename T>
TaskTerm<T> mixed_task_loss(const Tensor<T>& mixed_toi_logits, const Tensor<T>& mixed_irt_logits,
                            std::span<const std::size_t> left_targets,
                            std::span<const std::size_t> right_targets,
                            std::span<const double> lams);

// ---- contrastive terms ----

struct ContrastiveConfig {
  double temperature = 0.5;
  std::size_t batch_k = 64;
  bool include_positive_in_denominator = false;

  void validate() const;
};

template <typename T>
struct NtXentTerm {
  double value = 0.0;
  Tensor<T> grad_anchors;
  Tensor<T> grad_positives;
};

// NT-Xent with anchors a_i and positives p_i (K x m each). For anchor i the
// denominator runs over the 2(K-1) entries a_j, p_j with j != i, plus p_i when
// cfg.include_positive_in_denominator. Similarity is the cosine divided by
// the temperature; the loss is the mean over anchors.
template <typename T>
NtXentTerm<T> nt_xent(const Tensor<T>& anchors, const Tensor<T>& positives,
                      const ContrastiveConfig& cfg);

template <typename T>
struct ContrastiveTerms {
  NtXentTerm<T> con_f;  // anchors zf_A, positives zf_B
  NtXentTerm<T> con_d;  // anchors zd_B, positives zd_C
};

template <typename T>
ContrastiveTerms<T> contrastive_losses(const Tensor<T>& zf_a, const Tensor<T>& zf_b,
                                       const Tensor<T>& zd_b, const Tensor<T>& zd_c,
                                       const ContrastiveConfig& cfg);

}  // namespace dmcl
