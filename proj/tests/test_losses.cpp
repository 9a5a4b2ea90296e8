#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dmcl/errors.hpp"
#include "dmcl/losses.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace dmcl;
using namespace dmcl::test;

namespace {

Tensor<double> rows(std::initializer_list<std::initializer_list<double>> r) {
  const std::size_t n = r.size(), m = r.begin()->size();
  Tensor<double> t({n, m});
  std::size_t i = 0;
  for (const auto& row : r)
    for (double v : row) t[i++] = v;
  return t;
}

}  // namespace

TEST_CASE("domain_loss at p = 0.5 everywhere is 2 log 0.5") {
  const std::vector<double> s(5, 0.5), t(7, 0.5);
  CHECK(domain_loss(s, t) == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-14));
  CHECK(domain_loss(s, t) == doctest::Approx(-1.3863).epsilon(1e-4));
}

TEST_CASE("domain_loss approaches 0 from below for perfect discrimination") {
  SaturationCounter sat;
  const std::vector<double> s{0.0, 1e-9}, t{1.0, 1.0 - 1e-9};
  const double v = domain_loss(s, t, &sat);
  CHECK(v < 0.0);
  CHECK(v > -1e-6);
  CHECK(sat.count == 4);
}

TEST_CASE("domain_loss is asymmetric in its arguments") {
  const std::vector<double> a{0.2}, b{0.9};
  const double forward = std::log(0.8) + std::log(0.9);
  const double swapped = std::log(0.1) + std::log(0.2);
  CHECK(domain_loss(a, b) == doctest::Approx(forward).epsilon(1e-14));
  CHECK(domain_loss(b, a) == doctest::Approx(swapped).epsilon(1e-14));
  CHECK(domain_loss(a, b) != domain_loss(b, a));
  const std::vector<double> c{0.3, 0.6};
  CHECK(domain_loss(c, c) == domain_loss(c, c));
}

TEST_CASE("mixed_domain_loss at p = 0.5 is log 0.5 for any lambda") {
  for (double lam : {0.0, 0.1, 0.7, 1.0}) {
    const std::vector<MixedProbability> mp{{0.5, lam}};
    CHECK(std::abs(mixed_domain_loss(mp) - std::log(0.5)) < 1e-12);
  }
}

TEST_CASE("mixed_domain_loss endpoints reduce to the pure domain terms") {
  const std::vector<double> p{0.13, 0.5, 0.77, 0.91};
  std::vector<MixedProbability> one, zero;
  double log_one_minus = 0.0, log_p = 0.0;
  for (double x : p) {
    one.push_back({x, 1.0});
    zero.push_back({x, 0.0});
    log_one_minus += std::log1p(-x);
    log_p += std::log(x);
  }
  CHECK(mixed_domain_loss(one) == doctest::Approx(log_one_minus / 4).epsilon(1e-14));
  CHECK(mixed_domain_loss(zero) == doctest::Approx(log_p / 4).epsilon(1e-14));
  // Same probabilities, lam = 1: identical to domain_loss's source term.
  const std::vector<double> half{0.5};
  CHECK(mixed_domain_loss(one) ==
        doctest::Approx(domain_loss(p, half) - std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("mixed_domain_loss rejects lambda outside [0, 1]") {
  const std::vector<MixedProbability> mp{{0.5, 1.5}};
  CHECK_THROWS_AS(mixed_domain_loss(mp), ConfigError);
}

TEST_CASE("cross-entropy of uniform logits is log C") {
  for (std::size_t c : {2u, 10u, 65u}) {
    Tensor<double> logits({4, c}, 0.37);
    const std::vector<std::size_t> targets{0, 1, c - 1, 1};
    CHECK(std::abs(cross_entropy(logits, targets).value - std::log(double(c))) < 1e-9);
  }
  Tensor<double> toi({3, 10}), irt({6, 10});
  const std::vector<std::size_t> tt{1, 2, 3}, it{0, 1, 2, 3, 4, 5};
  CHECK(task_loss(toi, tt, irt, it).value == doctest::Approx(2 * std::log(10.0)).epsilon(1e-12));
  CHECK(task_loss(toi, tt, irt, it).value == doctest::Approx(4.6052).epsilon(1e-4));
}

TEST_CASE("cross-entropy tends to 0 with a growing correct margin") {
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    Tensor<double> logits({1, 4});
    logits.at(0, 2) = margin;
    const std::vector<std::size_t> t{2};
    const double v = cross_entropy(logits, t).value;
    CHECK(v >= 0.0);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-20);
}

TEST_CASE("cross-entropy rejects out-of-range targets") {
  Tensor<double> logits({1, 3});
  const std::vector<std::size_t> t{3};
  CHECK_THROWS_AS(cross_entropy(logits, t), ShapeError);
}

TEST_CASE("mixed_task_loss endpoints and uniform midpoint") {
  Rng rng(3);
  Tensor<double> toi = random_matrix(5, 10, rng), irt = random_matrix(5, 10, rng);
  const std::vector<std::size_t> left{0, 3, 9, 2, 2}, right{1, 1, 4, 8, 0};
  const std::vector<double> ones(5, 1.0), zeros(5, 0.0), halves(5, 0.5);
  CHECK(mixed_task_loss(toi, irt, left, right, ones).value ==
        doctest::Approx(cross_entropy(toi, left).value).epsilon(1e-13));
  CHECK(mixed_task_loss(toi, irt, left, right, zeros).value ==
        doctest::Approx(cross_entropy(irt, right).value).epsilon(1e-13));
  Tensor<double> u({5, 10});
  CHECK(mixed_task_loss(u, u, left, right, halves).value ==
        doctest::Approx(std::log(10.0)).epsilon(1e-13));
}

TEST_CASE("nt_xent hand values at K = 2") {
  SUBCASE("identical embeddings give log 2") {
    Tensor<double> z = rows({{0.3, -1.2, 0.5}, {0.3, -1.2, 0.5}});
    for (double tau : {0.1, 0.5, 1.0}) {
      ContrastiveConfig cfg{tau, 2, false};
      CHECK(std::abs(nt_xent(z, z, cfg).value - std::log(2.0)) < 1e-9);
    }
  }
  SUBCASE("orthogonal negatives with tau = 1 give log 2 - 1") {
    // a_0 = p_0 = e0, a_1 = p_1 = e1: every negative is orthogonal to its anchor.
    Tensor<double> a = rows({{1, 0}, {0, 1}});
    ContrastiveConfig cfg{1.0, 2, false};
    CHECK(std::abs(nt_xent(a, a, cfg).value - (std::log(2.0) - 1.0)) < 1e-9);
    CHECK(nt_xent(a, a, cfg).value == doctest::Approx(-0.3069).epsilon(1e-4));
  }
  SUBCASE("identical embeddings at larger K give log 2(K-1)") {
    Tensor<double> z({6, 4}, 1.0);
    ContrastiveConfig cfg{0.5, 6, false};
    CHECK(std::abs(nt_xent(z, z, cfg).value - std::log(10.0)) < 1e-9);
  }
}

TEST_CASE("nt_xent matches the literal definition in both denominator modes") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = 2 + uniform_index(rng, 7);
    Tensor<double> a = random_matrix(k, 5, rng), p = random_matrix(k, 5, rng);
    for (bool incl : {false, true}) {
      const double tau = 0.1 + uniform01(rng);
      ContrastiveConfig cfg{tau, k, incl};
      CHECK(nt_xent(a, p, cfg).value ==
            doctest::Approx(ref_nt_xent(rows_of(a), rows_of(p), tau, incl)).epsilon(1e-11));
    }
  }
}

TEST_CASE("nt_xent is scale invariant and permutation invariant") {
  Rng rng(5);
  Tensor<double> a = random_matrix(8, 6, rng), p = random_matrix(8, 6, rng);
  ContrastiveConfig cfg{0.5, 8, false};
  const double base = nt_xent(a, p, cfg).value;
  for (double c : {1e-3, 0.5, 3.0, 1e4}) {
    Tensor<double> as = a, ps = p;
    for (auto& v : as.values()) v *= c;
    for (auto& v : ps.values()) v *= c;
    CHECK(std::abs(nt_xent(as, ps, cfg).value - base) < 1e-9);
  }
  // Reverse the row order in both collections.
  Tensor<double> ar = a, pr = p;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      ar.at(i, j) = a.at(7 - i, j);
      pr.at(i, j) = p.at(7 - i, j);
    }
  CHECK(nt_xent(ar, pr, cfg).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("nt_xent rejects degenerate inputs") {
  ContrastiveConfig cfg{0.5, 2, false};
  Tensor<double> one({1, 3}, 1.0);
  CHECK_THROWS_AS(nt_xent(one, one, cfg), ConfigError);
  Tensor<double> zero = rows({{0, 0, 0}, {1, 0, 0}});
  CHECK_THROWS_AS(nt_xent(zero, zero, cfg), NumericError);
  ContrastiveConfig bad{0.0, 2, false};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("contrastive_losses of independent random unit embeddings near log 2(K-1)") {
  // Monte Carlo over 20 draws: each value stays within the +-6 band.
  Rng rng(13);
  ContrastiveConfig cfg{0.5, 64, false};
  for (int t = 0; t < 20; ++t) {
    Tensor<double> a = random_matrix(64, 32, rng), b = random_matrix(64, 32, rng),
                   c = random_matrix(64, 32, rng);
    const auto terms = contrastive_losses(a, b, b, c, cfg);
    CHECK(std::abs(terms.con_d.value - std::log(126.0)) < 6.0);
    CHECK(std::abs(terms.con_f.value - std::log(126.0)) < 6.0);
  }
  Tensor<double> same({2, 3}, 1.0);
  ContrastiveConfig k2{0.5, 2, false};
  CHECK(std::abs(contrastive_losses(same, same, same, same, k2).con_f.value - std::log(2.0)) <
        1e-9);
}

TEST_CASE("loss gradients with respect to their inputs match finite differences") {
  Rng rng(17);
  SUBCASE("domain terms") {
    std::vector<double> zs{0.3, -1.1, 2.0, 0.1}, zt{-0.4, 0.9, 1.7, -2.2};
    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    auto probs = [&](const std::vector<double>& z) {
      std::vector<double> p;
      for (double v : z) p.push_back(sig(v));
      return p;
    };
    const DomainTerm dt = domain_loss_with_grad(probs(zs), probs(zt));
    auto f = [&]() { return domain_loss(probs(zs), probs(zt)); };
    CHECK(relative_error(dt.grad_source, numeric_gradient(zs, f)) < 1e-8);
    CHECK(relative_error(dt.grad_target, numeric_gradient(zt, f)) < 1e-8);

    std::vector<double> zm{0.4, -0.8, 1.5, 0.05}, lams{0.1, 0.5, 0.9, 0.33};
    auto mixed = [&]() {
      std::vector<MixedProbability> mp;
      for (std::size_t i = 0; i < zm.size(); ++i) mp.push_back({sig(zm[i]), lams[i]});
      return mp;
    };
    const MixedDomainTerm md = mixed_domain_loss_with_grad(mixed());
    CHECK(relative_error(md.grad, numeric_gradient(zm, [&] { return mixed_domain_loss(mixed()); })) <
          1e-8);
  }
  SUBCASE("nt_xent") {
    for (bool incl : {false, true}) {
      Tensor<double> a = random_matrix(4, 5, rng), p = random_matrix(4, 5, rng);
      ContrastiveConfig cfg{0.5, 4, incl};
      const auto term = nt_xent(a, p, cfg);
      auto f = [&]() { return nt_xent(a, p, cfg).value; };
      std::vector<double> av = a.storage(), pv = p.storage();
      auto fa = [&]() { a.storage() = av; return f(); };
      auto fp = [&]() { p.storage() = pv; return f(); };
      const auto na = numeric_gradient(av, fa);
      a.storage() = av;
      const auto np = numeric_gradient(pv, fp);
      p.storage() = pv;
      CHECK(relative_error(term.grad_anchors.storage(), na) < 1e-7);
      CHECK(relative_error(term.grad_positives.storage(), np) < 1e-7);
    }
  }
}

TEST_CASE("objective gradients with respect to model parameters match finite differences") {
  for (Objective obj : kAllObjectives) {
    CAPTURE(objective_name(obj));
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
      const GradCheck g = check_objective(obj, trial);
      CHECK(g.analytic_norm > 0.0);
      CHECK(g.coordinates >= 48);
      CHECK(g.relative_error < 1e-4);
    }
  }
}
