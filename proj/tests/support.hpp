#pragma once

// Shared fixtures for the unit and acceptance tests: tiny synthetic datasets,
// small model configurations, and independent reference implementations of
// the objectives (written directly from their definitions, without the
// numerical tricks used by the library).

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dmcl/datasets.hpp"
#include "dmcl/model.hpp"
#include "dmcl/rng.hpp"
#include "dmcl/tensor.hpp"

namespace dmcl::test {

// ---- synthetic data ----

inline LabeledImage random_sample(std::size_t h, std::size_t w, std::size_t cls, Task task,
                                  double domain, const std::string& path, Rng& rng) {
  LabeledImage s;
  s.height = h;
  s.width = w;
  s.pixels.resize(3 * h * w);
  for (auto& p : s.pixels) p = static_cast<float>(uniform01(rng));
  s.class_index = cls;
  s.task = task;
  s.domain_label = domain;
  s.path = path;
  s.sample_id = sample_id_for(path);
  return s;
}

inline std::vector<LabeledImage> random_split(std::size_t n, std::size_t classes, Task task,
                                              double domain, const std::string& name,
                                              std::size_t h, std::size_t w, Rng& rng) {
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(random_sample(h, w, i % classes, task, domain,
                                name + "/" + std::to_string(i) + ".ppm", rng));
  return out;
}

inline LabelSpaces small_spaces(std::size_t toi = 3, std::size_t irt = 3) {
  LabelSpaces s;
  for (std::size_t i = 0; i < toi; ++i) s.toi_classes.push_back("t" + std::to_string(i));
  for (std::size_t i = 0; i < irt; ++i) s.irt_classes.push_back("i" + std::to_string(i));
  return s;
}

// Random 8x8 dataset with 3 ToI and 3 IrT classes.
inline ZsdaDataset tiny_dataset(std::size_t per_split = 12, std::uint64_t seed = 7,
                                std::size_t side = 8) {
  Rng rng(seed);
  auto a = random_split(per_split, 3, Task::kToi, 0.0, "s_toi", side, side, rng);
  auto b = random_split(per_split, 3, Task::kIrt, 0.0, "s_irt", side, side, rng);
  auto c = random_split(per_split, 3, Task::kIrt, 1.0, "t_irt", side, side, rng);
  auto d = random_split(per_split, 3, Task::kToi, 1.0, "t_toi", side, side, rng);
  return ZsdaDataset(std::move(a), std::move(b), std::move(c), std::move(d), small_spaces());
}

inline ArchitectureConfig tiny_arch(std::size_t side = 8) {
  ArchitectureConfig a;
  a.conv_channels_g = {3, 4, 4};
  a.conv_channels_branch = {4, 4, 5};
  a.embedding_dims = {5, 5};
  a.input_shape = {side, side, 3};
  a.head_class_counts = {3, 3};
  return a;
}

// ---- reference objectives ----

inline double ref_cross_entropy(const std::vector<double>& logits, std::size_t target) {
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z);
  return std::log(sum) - logits[target];
}

inline double ref_cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return uv / std::sqrt(uu * vv);
}

// Literal NT-Xent: for anchor i, -log(exp(s(a_i,p_i)/t) / sum over j != i of
// exp(s(a_i,a_j)/t) + exp(s(a_i,p_j)/t) [+ exp(s(a_i,p_i)/t)]), averaged.
inline double ref_nt_xent(const std::vector<std::vector<double>>& a,
                          const std::vector<std::vector<double>>& p, double tau,
                          bool include_positive) {
  const std::size_t k = a.size();
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double num = std::exp(ref_cosine(a[i], p[i]) / tau);
    double den = include_positive ? num : 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      den += std::exp(ref_cosine(a[i], a[j]) / tau) + std::exp(ref_cosine(a[i], p[j]) / tau);
    }
    total += -std::log(num / den);
  }
  return total / double(k);
}

inline std::vector<std::vector<double>> rows_of(const Tensor<double>& t) {
  std::vector<std::vector<double>> out(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    out[i].assign(t.data() + i * t.stride0(), t.data() + (i + 1) * t.stride0());
  return out;
}

inline Tensor<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor<double> t({r, c});
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(d) / denom;
}

// Central difference of f at every coordinate of x (x is restored).
inline std::vector<double> numeric_gradient(std::vector<double>& x,
                                            const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace dmcl::test
