#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fastat/attacks.hpp"
#include "fastat/losses.hpp"
#include "test_support.hpp"

using fastat::AttackConfig;
using fastat::Model;
using fastat::Rng;
using fastat::Tensor;

namespace {

// Linear softmax model with chosen weights; no hidden layers.
template <typename S>
Model<S> linear_model(int d, int classes, const std::vector<double>& w,
                      const std::vector<double>& b) {
  Model<S> m = fastat::init_model<S>(testsup::flat_spec(d, {}, classes), 0);
  for (int64_t i = 0; i < m.params[0].numel(); ++i) m.params[0][i] = static_cast<S>(w[size_t(i)]);
  for (int64_t i = 0; i < m.params[1].numel(); ++i) m.params[1][i] = static_cast<S>(b[size_t(i)]);
  return m;
}

}  // namespace

TEST_CASE("attacks: config invariants") {
  AttackConfig<float> c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = -0.1f;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = AttackConfig<float>{};
  c.alpha = -1.0f;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = AttackConfig<float>{};
  c.steps = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("attacks: fgsm moves each coordinate by epsilon along the gradient sign") {
  // Binary linear model: the input gradient is (p1 - [y=1]) * (w1 - w0), so
  // for label 0 its sign equals sign(w1 - w0) coordinate-wise.
  const int d = 4;
  const std::vector<double> w = {0.5, -0.5, -1.0, 1.0, 2.0, -2.0, 0.25, 0.75};  // (d,2) rows
  const std::vector<double> b = {0.0, 0.0};
  const auto m = linear_model<double>(d, 2, w, b);
  const Tensor<double> x({1, d}, {0.4, 0.5, 0.6, 0.3});
  const double eps = 0.05;
  const auto res = fastat::fgsm_step(m, x, std::vector<int>{0}, eps);
  // w1 - w0 per coordinate: -1, 2, -4, 0.5 -> signs -1, +1, -1, +1
  const double sgn[4] = {-1, 1, -1, 1};
  for (int i = 0; i < d; ++i) {
    CHECK(res.g[i] == sgn[i]);
    CHECK(res.x_adv[i] == doctest::Approx(x[i] + eps * sgn[i]).epsilon(1e-12));
  }
}

TEST_CASE("attacks: fgsm loss hits the box maximum on binary linear models") {
  // For two-class linear softmax the loss is a monotone function of one
  // linear score, so the signed step is exactly the best vertex. Enumerate
  // all 2^d vertices to confirm.
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(8));
    std::vector<double> w(size_t(d) * 2), b = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    for (auto& v : w) v = rng.uniform(-2, 2);
    const auto m = linear_model<double>(d, 2, w, b);
    const auto x = testsup::rand_tensor<double>({1, d}, rng, 0.2, 0.8);
    const int label = static_cast<int>(rng.below(2));
    const double eps = rng.uniform(0.02, 0.2);

    const auto res = fastat::fgsm_step(m, x, std::vector<int>{label}, eps);
    const double fgsm_loss = fastat::ce_at(m, res.x_adv, std::vector<int>{label});
    const double best = testsup::vertex_max_loss(x, eps, [&](const Tensor<double>& probe) {
      return fastat::ce_at(m, probe, std::vector<int>{label});
    });
    CHECK(fgsm_loss == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("attacks: single-step pgd with alpha=epsilon and no extras equals fgsm") {
  const auto spec = testsup::flat_spec(6, {5}, 3);
  const auto m = fastat::init_model<float>(spec, 12);
  Rng rng(13);
  const auto x = testsup::rand_tensor<float>({4, 6}, rng, 0.1, 0.9);
  const std::vector<int> y = {0, 2, 1, 0};

  const auto f = fastat::fgsm_step(m, x, y, 0.06f);
  AttackConfig<float> cfg;
  cfg.epsilon = 0.06f;
  cfg.alpha = 0.06f;
  cfg.steps = 1;
  cfg.random_start = false;
  cfg.clamp_pixels = false;
  Rng prng(0);
  const auto p = fastat::pgd_attack(m, x, y, cfg, prng);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(p[i] == f.x_adv[i]);
}

TEST_CASE("attacks: pgd respects the budget and the pixel box") {
  const auto spec = testsup::flat_spec(5, {4}, 2);
  const auto m = fastat::init_model<float>(spec, 3);
  Rng rng(17);
  const auto x = testsup::rand_tensor<float>({6, 5}, rng, 0.0, 1.0);
  const std::vector<int> y = {0, 1, 0, 1, 0, 1};
  AttackConfig<float> cfg;
  cfg.epsilon = 0.1f;
  cfg.alpha = 0.03f;
  cfg.steps = 7;
  cfg.random_start = true;
  cfg.clamp_pixels = true;
  cfg.seed = 5;
  const auto adv = fastat::pgd_attack(m, x, y, cfg);
  CHECK(fastat::linf_dist(adv, x) <= 0.1f + 1e-6f);
  for (int64_t i = 0; i < adv.numel(); ++i) {
    CHECK(adv[i] >= 0.0f);
    CHECK(adv[i] <= 1.0f);
  }
}

TEST_CASE("attacks: zero steps returns the clean point") {
  const auto spec = testsup::flat_spec(3, {}, 2);
  const auto m = fastat::init_model<float>(spec, 3);
  const Tensor<float> x({1, 3}, {0.2f, 0.5f, 0.8f});
  AttackConfig<float> cfg;
  cfg.epsilon = 0.1f;
  cfg.steps = 0;
  cfg.random_start = false;
  const auto adv = fastat::pgd_attack(m, x, {1}, cfg);
  for (int64_t i = 0; i < 3; ++i) CHECK(adv[i] == x[i]);
}

TEST_CASE("attacks: epsilon zero keeps fgsm in place") {
  const auto spec = testsup::flat_spec(3, {}, 2);
  const auto m = fastat::init_model<float>(spec, 3);
  const Tensor<float> x({1, 3}, {0.2f, 0.5f, 0.8f});
  const auto res = fastat::fgsm_step(m, x, std::vector<int>{0}, 0.0f);
  for (int64_t i = 0; i < 3; ++i) CHECK(res.x_adv[i] == x[i]);
}

TEST_CASE("attacks: random start stays inside the ball and varies with the stream") {
  Rng a(1), b(2);
  const auto na = fastat::random_init_uniform<float>({2, 8}, 0.25f, a);
  const auto nb = fastat::random_init_uniform<float>({2, 8}, 0.25f, b);
  bool differ = false;
  for (int64_t i = 0; i < na.numel(); ++i) {
    CHECK(std::fabs(na[i]) <= 0.25f);
    if (na[i] != nb[i]) differ = true;
  }
  CHECK(differ);
}

TEST_CASE("attacks: more pgd steps do not reduce the attack loss (statistically)") {
  // With alpha <= epsilon and a shared zero start, running more steps keeps
  // or raises the mean loss on nearly every batch.
  const auto spec = testsup::flat_spec(8, {10}, 3);
  const auto m = fastat::init_model<float>(spec, 23);
  Rng rng(29);
  int violations = 0, comparisons = 0;
  for (int batch = 0; batch < 40; ++batch) {
    const auto x = testsup::rand_tensor<float>({6, 8}, rng, 0.1, 0.9);
    std::vector<int> y(6);
    for (auto& v : y) v = static_cast<int>(rng.below(3));
    double prev = -1;
    for (const int steps : {1, 2, 4, 8}) {
      AttackConfig<float> cfg;
      cfg.epsilon = 0.08f;
      cfg.alpha = 0.02f;
      cfg.steps = steps;
      cfg.random_start = false;
      cfg.clamp_pixels = false;
      Rng prng(0);
      const auto adv = fastat::pgd_attack(m, x, y, cfg, prng);
      const double loss = fastat::ce_at(m, adv, y);
      if (prev >= 0) {
        ++comparisons;
        if (loss < prev - 1e-6) ++violations;
      }
      prev = loss;
    }
  }
  CHECK(comparisons == 120);
  CHECK(violations <= comparisons / 20);  // at least 95% monotone
}

TEST_CASE("attacks: attacks never mutate the model") {
  const auto spec = testsup::flat_spec(5, {4}, 2);
  const auto m = fastat::init_model<float>(spec, 37);
  const auto before = testsup::get_params(m);
  Rng rng(41);
  const auto x = testsup::rand_tensor<float>({3, 5}, rng, 0, 1);
  const std::vector<int> y = {0, 1, 0};
  (void)fastat::fgsm_step(m, x, y, 0.05f);
  AttackConfig<float> cfg;
  cfg.epsilon = 0.05f;
  cfg.alpha = 0.0125f;
  cfg.steps = 5;
  cfg.random_start = true;
  (void)fastat::pgd_attack(m, x, y, cfg);
  const auto after = testsup::get_params(m);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("attacks: the budget assertion reports violations with the index") {
  const Tensor<float> clean({2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
  Tensor<float> adv = clean;
  adv[2] += 0.25f;
  CHECK_NOTHROW(fastat::assert_linf_budget(adv, clean, 0.25f, "test"));
  adv[2] += 0.01f;
  CHECK_THROWS_WITH_AS(fastat::assert_linf_budget(adv, clean, 0.25f, "test"),
                       doctest::Contains("index 2"), std::runtime_error);
}

TEST_CASE("attacks: evaluation presets") {
  const auto f = fastat::fgsm_eval_attack(0.2f);
  CHECK(f.alpha == 0.2f);
  CHECK(f.steps == 1);
  CHECK(!f.random_start);
  const auto p = fastat::pgd_eval_attack(0.2f, 10);
  CHECK(p.alpha == doctest::Approx(0.05f));
  CHECK(p.steps == 10);
  CHECK(p.random_start);
}
