#include "dmcl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dmcl/errors.hpp"

namespace dmcl {

namespace {

double clamp_prob(double p, SaturationCounter* saturation) {
  if (!(p >= kProbabilityEpsilon && p <= 1.0 - kProbabilityEpsilon)) {
    if (saturation) ++saturation->count;
    if (std::isnan(p)) throw NumericError("domain probability is NaN");
    return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  }
  return p;
}

double mean_log_one_minus(std::span<const double> probs, SaturationCounter* sat) {
  double acc = 0.0;
  for (double p : probs) acc += std::log1p(-clamp_prob(p, sat));
  return acc / double(probs.size());
}

double mean_log(std::span<const double> probs, SaturationCounter* sat) {
  double acc = 0.0;
  for (double p : probs) acc += std::log(clamp_prob(p, sat));
  return acc / double(probs.size());
}

void check_lams(std::span<const MixedProbability> samples) {
  for (const auto& s : samples)
    if (!(s.lam >= 0.0 && s.lam <= 1.0)) throw ConfigError("mixing weight outside [0, 1]");
}

}  // namespace

double domain_loss(std::span<const double> source_probs, std::span<const double> target_probs,
                   SaturationCounter* saturation) {
  if (source_probs.empty() || target_probs.empty())
    throw ShapeError("domain_loss needs samples from both domains");
  return mean_log_one_minus(source_probs, saturation) + mean_log(target_probs, saturation);
}

double mixed_domain_loss(std::span<const MixedProbability> samples, SaturationCounter* saturation) {
  if (samples.empty()) throw ShapeError("mixed_domain_loss needs at least one sample");
  check_lams(samples);
  double acc = 0.0;
  for (const auto& s : samples) {
    const double p = clamp_prob(s.prob, saturation);
    acc += s.lam * std::log1p(-p) + (1.0 - s.lam) * std::log(p);
  }
  return acc / double(samples.size());
}

DomainTerm domain_loss_with_grad(std::span<const double> source_probs,
                                 std::span<const double> target_probs,
                                 SaturationCounter* saturation) {
  DomainTerm t;
  t.value = domain_loss(source_probs, target_probs, saturation);
  t.grad_source.resize(source_probs.size());
  t.grad_target.resize(target_probs.size());
  for (std::size_t i = 0; i < source_probs.size(); ++i)
    t.grad_source[i] = -source_probs[i] / double(source_probs.size());
  for (std::size_t i = 0; i < target_probs.size(); ++i)
    t.grad_target[i] = (1.0 - target_probs[i]) / double(target_probs.size());
  return t;
}

MixedDomainTerm mixed_domain_loss_with_grad(std::span<const MixedProbability> samples,
                                            SaturationCounter* saturation) {
  MixedDomainTerm t;
  t.value = mixed_domain_loss(samples, saturation);
  t.grad.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    t.grad[i] = ((1.0 - samples[i].lam) - samples[i].prob) / double(samples.size());
  return t;
}

template <typename T>
CrossEntropyTerm<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets,
                                  std::span<const double> weights) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  if (!weights.empty() && weights.size() != targets.size())
    throw ShapeError("cross_entropy: weight count mismatch");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  CrossEntropyTerm<T> out;
  out.grad = Tensor<T>(logits.shape());
  if (n == 0) return out;
  std::vector<double> prob(c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c)
      throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) +
                       " out of range for " + std::to_string(c) + " classes");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, double(logits.at(i, k)));
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      prob[k] = std::exp(double(logits.at(i, k)) - mx);
      sum += prob[k];
    }
    const double lse = mx + std::log(sum);
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * (lse - double(logits.at(i, targets[i])));
    for (std::size_t k = 0; k < c; ++k) {
      const double g = prob[k] / sum - (k == targets[i] ? 1.0 : 0.0);
      out.grad.at(i, k) = static_cast<T>(w * g / double(n));
    }
  }
  out.value = total / double(n);
  return out;
}

template <typename T>
TaskTerm<T> task_loss(const Tensor<T>& toi_logits, std::span<const std::size_t> toi_targets,
                      const Tensor<T>& irt_logits, std::span<const std::size_t> irt_targets) {
  auto toi = cross_entropy(toi_logits, toi_targets);
  auto irt = cross_entropy(irt_logits, irt_targets);
  return {toi.value + irt.value, std::move(toi.grad), std::move(irt.grad)};
}

template <typename T>
TaskTerm<T> mixed_task_loss(const Tensor<T>& mixed_toi_logits, const Tensor<T>& mixed_irt_logits,
                            std::span<const std::size_t> left_targets,
                            std::span<const std::size_t> right_targets,
                            std::span<const double> lams) {
  if (left_targets.size() != lams.size() || right_targets.size() != lams.size())
    throw ShapeError("mixed_task_loss: target/lambda count mismatch");
  std::vector<double> rest(lams.size());
  for (std::size_t i = 0; i < lams.size(); ++i) {
    if (!(lams[i] >= 0.0 && lams[i] <= 1.0)) throw ConfigError("mixing weight outside [0, 1]");
    rest[i] = 1.0 - lams[i];
  }
  auto toi = cross_entropy(mixed_toi_logits, left_targets, lams);
  auto irt = cross_entropy(mixed_irt_logits, right_targets, rest);
  return {toi.value + irt.value, std::move(toi.grad), std::move(irt.grad)};
}

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  if (batch_k < 2) throw ConfigError("contrastive batch size K must be at least 2");
}

namespace {

// Row-normalizes a K x m matrix; returns norms. Throws on (near) zero rows.
std::vector<double> normalize_rows(const Tensor<double>& z, Tensor<double>& u, const char* which) {
  const std::size_t k = z.dim(0), m = z.dim(1);
  u = Tensor<double>(z.shape());
  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m; ++j) sq += z.at(i, j) * z.at(i, j);
    norms[i] = std::sqrt(sq);
    if (!(norms[i] > 1e-12))
      throw NumericError(std::string("nt_xent: ") + which + " embedding " + std::to_string(i) +
                         " has zero norm");
    for (std::size_t j = 0; j < m; ++j) u.at(i, j) = z.at(i, j) / norms[i];
  }
  return norms;
}

// Gradient through x / ||x||: (g - (g.u) u) / ||x||.
template <typename T>
Tensor<T> through_normalization(const Tensor<double>& g, const Tensor<double>& u,
                                const std::vector<double>& norms) {
  const std::size_t k = g.dim(0), m = g.dim(1);
  Tensor<T> out(g.shape());
  for (std::size_t i = 0; i < k; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * u.at(i, j);
    for (std::size_t j = 0; j < m; ++j)
      out.at(i, j) = static_cast<T>((g.at(i, j) - dot * u.at(i, j)) / norms[i]);
  }
  return out;
}

}  // namespace

template <typename T>
NtXentTerm<T> nt_xent(const Tensor<T>& anchors, const Tensor<T>& positives,
                      const ContrastiveConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  if (anchors.rank() != 2 || anchors.shape() != positives.shape())
    throw ShapeError("nt_xent: anchors " + shape_string(anchors.shape()) + " vs positives " +
                     shape_string(positives.shape()));
  const std::size_t k = anchors.dim(0), m = anchors.dim(1);
  if (k < 2) throw ConfigError("nt_xent needs K >= 2 (K = 1 leaves no negatives)");

  Tensor<double> ua, up;
  const auto na = normalize_rows(anchors.template cast<double>(), ua, "anchor");
  const auto np = normalize_rows(positives.template cast<double>(), up, "positive");
  const double inv_tau = 1.0 / cfg.temperature;

  // sim_aa[i][j] = <ua_i, ua_j> / tau, sim_ap[i][j] = <ua_i, up_j> / tau.
  Tensor<double> sim_aa({k, k}), sim_ap({k, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double aa = 0.0, ap = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        aa += ua.at(i, c) * ua.at(j, c);
        ap += ua.at(i, c) * up.at(j, c);
      }
      sim_aa.at(i, j) = aa * inv_tau;
      sim_ap.at(i, j) = ap * inv_tau;
    }

  Tensor<double> ga({k, m}), gp({k, m});  // gradients w.r.t. normalized vectors
  double total = 0.0;
  const double scale = 1.0 / double(k);
  std::vector<double> w_aa(k), w_ap(k);
  for (std::size_t i = 0; i < k; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) mx = std::max({mx, sim_aa.at(i, j), sim_ap.at(i, j)});
      else if (cfg.include_positive_in_denominator) mx = std::max(mx, sim_ap.at(i, i));
    }
    double den = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      w_aa[j] = j != i ? std::exp(sim_aa.at(i, j) - mx) : 0.0;
      w_ap[j] = (j != i || cfg.include_positive_in_denominator) ? std::exp(sim_ap.at(i, j) - mx) : 0.0;
      den += w_aa[j] + w_ap[j];
    }
    total += -sim_ap.at(i, i) + mx + std::log(den);
    for (std::size_t j = 0; j < k; ++j) {
      w_aa[j] /= den;
      w_ap[j] /= den;
    }
    // d loss_i / d ua_i, d ua_j, d up_j (all scaled by 1/tau and 1/K).
    for (std::size_t c = 0; c < m; ++c) {
      double g_anchor = -up.at(i, c);
      for (std::size_t j = 0; j < k; ++j) g_anchor += w_aa[j] * ua.at(j, c) + w_ap[j] * up.at(j, c);
      ga.at(i, c) += g_anchor * inv_tau * scale;
      gp.at(i, c) += -ua.at(i, c) * inv_tau * scale;
      for (std::size_t j = 0; j < k; ++j) {
        ga.at(j, c) += w_aa[j] * ua.at(i, c) * inv_tau * scale;
        gp.at(j, c) += w_ap[j] * ua.at(i, c) * inv_tau * scale;
      }
    }
  }

  NtXentTerm<T> out;
  out.value = total * scale;
  if (!std::isfinite(out.value)) throw NumericError("nt_xent: non-finite loss");
  out.grad_anchors = through_normalization<T>(ga, ua, na);
  out.grad_positives = through_normalization<T>(gp, up, np);
  return out;
}

template <typename T>
ContrastiveTerms<T> contrastive_losses(const Tensor<T>& zf_a, const Tensor<T>& zf_b,
                                       const Tensor<T>& zd_b, const Tensor<T>& zd_c,
                                       const ContrastiveConfig& cfg) {
  if (zf_a.rank() != 2 || zd_b.rank() != 2 || zf_a.dim(0) != zf_b.dim(0) ||
      zf_a.dim(0) != zd_b.dim(0) || zf_a.dim(0) != zd_c.dim(0))
    throw ShapeError("contrastive_losses: embedding collections differ in length");
  return {nt_xent(zf_a, zf_b, cfg), nt_xent(zd_b, zd_c, cfg)};
}

#define DMCL_INSTANTIATE_LOSSES(T)                                                               \
  template CrossEntropyTerm<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::size_t>,  \
                                                std::span<const double>);                        \
  template TaskTerm<T> task_loss<T>(const Tensor<T>&, std::span<const std::size_t>,              \
                                    const Tensor<T>&, std::span<const std::size_t>);             \
  template TaskTerm<T> mixed_task_loss<T>(const Tensor<T>&, const Tensor<T>&,                    \
                                          std::span<const std::size_t>,                          \
                                          std::span<const std::size_t>, std::span<const double>); \
  template NtXentTerm<T> nt_xent<T>(const Tensor<T>&, const Tensor<T>&, const ContrastiveConfig&); \
  template ContrastiveTerms<T> contrastive_losses<T>(const Tensor<T>&, const Tensor<T>&,         \
                                                     const Tensor<T>&, const Tensor<T>&,         \
                                                     const ContrastiveConfig&);

DMCL_INSTANTIATE_LOSSES(float)
DMCL_INSTANTIATE_LOSSES(double)

}  // namespace dmcl
