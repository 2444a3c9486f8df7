#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fastat/losses.hpp"
#include "test_support.hpp"

using fastat::Model;
using fastat::Rng;
using fastat::Tensor;

TEST_CASE("losses: cross entropy matches the long-double reference") {
  Rng rng(51);
  for (int rep = 0; rep < 20; ++rep) {
    const int b = 1 + static_cast<int>(rng.below(6));
    const int c = 2 + static_cast<int>(rng.below(7));
    const auto z = testsup::rand_tensor<double>({b, c}, rng, -4, 4);
    std::vector<int> y(size_t(b));
    for (auto& v : y) v = static_cast<int>(rng.below(uint64_t(c)));
    const double got = fastat::ce_loss(z, y);
    const double want = testsup::ref_ce_mean(testsup::rows_of(z), y);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("losses: mean squared divergence matches the reference and rejects empties") {
  Rng rng(52);
  const auto p = testsup::rand_tensor<double>({3, 4}, rng, 0, 1);
  const auto q = testsup::rand_tensor<double>({3, 4}, rng, 0, 1);
  CHECK(fastat::l1_msd(p, q) ==
        doctest::Approx(testsup::ref_msd(testsup::flat_of(p), testsup::flat_of(q)))
            .epsilon(1e-12));
  CHECK_THROWS_AS(fastat::l1_msd(Tensor<double>({0}), Tensor<double>({0})),
                  std::invalid_argument);
}

TEST_CASE("losses: per-example l2 perturbation norm") {
  // Two examples: diffs (3,4) -> 5 and (0,0) -> 0; mean 2.5.
  const Tensor<float> a({2, 2}, {3, 4, 1, 1});
  const Tensor<float> b({2, 2}, {0, 0, 1, 1});
  CHECK(fastat::perturbation_l2_norm(a, b) == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("losses: beta=0 reduces the fused loss to plain cross entropy") {
  Rng rng(53);
  for (int rep = 0; rep < 50; ++rep) {
    const int in_dim = 3 + static_cast<int>(rng.below(4));
    const int classes = 2 + static_cast<int>(rng.below(3));
    const int b = 1 + static_cast<int>(rng.below(5));
    const auto spec = testsup::flat_spec(in_dim, {5}, classes);
    const auto m = fastat::init_model<double>(spec, 1000 + uint64_t(rep));
    const auto x_train = testsup::rand_tensor<double>({b, in_dim}, rng, 0, 1);
    const auto x_curr = testsup::rand_tensor<double>({b, in_dim}, rng, 0, 1);
    const auto x_prev = testsup::rand_tensor<double>({b, in_dim}, rng, 0, 1);
    std::vector<int> y(size_t(b));
    for (auto& v : y) v = static_cast<int>(rng.below(uint64_t(classes)));

    const auto fused = fastat::pco_loss(m, x_train, x_curr, x_prev, y, 0.0, true);
    const double plain = fastat::ce_loss(fastat::forward_logits(m, x_train), y);
    CHECK(std::fabs(fused.total - plain) < 1e-12);
    CHECK(fused.total == fused.ce);
  }
}

TEST_CASE("losses: beta=0 gradients equal the plain cross entropy gradients bitwise") {
  Rng rng(54);
  const auto spec = testsup::flat_spec(5, {6}, 3);
  const auto m = fastat::init_model<float>(spec, 77);
  const auto x_train = testsup::rand_tensor<float>({4, 5}, rng, 0, 1);
  const auto x_curr = testsup::rand_tensor<float>({4, 5}, rng, 0, 1);
  const auto x_prev = testsup::rand_tensor<float>({4, 5}, rng, 0, 1);
  const std::vector<int> y = {0, 1, 2, 1};

  const auto fused = fastat::pco_loss_with_grads(m, x_train, x_curr, x_prev, y, 0.0f, true);
  const auto plain = fastat::ce_loss_with_grads(m, x_train, y);
  CHECK(fused.value.total == plain.loss);
  REQUIRE(fused.param_grads.size() == plain.param_grads.size());
  for (size_t i = 0; i < plain.param_grads.size(); ++i) {
    for (int64_t j = 0; j < plain.param_grads[i].numel(); ++j) {
      CHECK(fused.param_grads[i][j] == plain.param_grads[i][j]);
    }
  }
}

TEST_CASE("losses: the regularizer can be negative and total = ce + beta*reg") {
  Rng rng(55);
  const auto spec = testsup::flat_spec(4, {5}, 3);
  const auto m = fastat::init_model<double>(spec, 9);
  const auto x_prev = testsup::rand_tensor<double>({3, 4}, rng, 0, 1);
  const auto x_curr = x_prev;  // gap term vanishes
  Tensor<double> x_train = x_prev;
  for (int64_t i = 0; i < x_train.numel(); ++i) x_train[i] = 1.0 - x_train[i];  // far away
  const std::vector<int> y = {0, 1, 2};

  const double beta = 2.5;
  const auto v = fastat::pco_loss(m, x_train, x_curr, x_prev, y, beta, true);
  CHECK(v.reg < 0.0);  // 0 - msd(f(x_train), f(x_curr))
  CHECK(v.total == doctest::Approx(v.ce + beta * v.reg).epsilon(1e-12));
}

TEST_CASE("losses: probability-space and logit-space regularizers differ") {
  Rng rng(56);
  const auto spec = testsup::flat_spec(4, {5}, 3);
  const auto m = fastat::init_model<double>(spec, 10);
  const auto a = testsup::rand_tensor<double>({2, 4}, rng, 0, 1);
  const auto b = testsup::rand_tensor<double>({2, 4}, rng, 0, 1);
  const auto c = testsup::rand_tensor<double>({2, 4}, rng, 0, 1);
  const std::vector<int> y = {0, 2};
  const auto probs = fastat::pco_loss(m, a, b, c, y, 1.0, true);
  const auto logits = fastat::pco_loss(m, a, b, c, y, 1.0, false);
  CHECK(probs.ce == logits.ce);
  CHECK(probs.reg != logits.reg);
}

TEST_CASE("losses: value-only and with-grads paths agree bitwise") {
  Rng rng(57);
  const auto spec = testsup::flat_spec(4, {5}, 3);
  const auto m = fastat::init_model<float>(spec, 11);
  const auto a = testsup::rand_tensor<float>({3, 4}, rng, 0, 1);
  const auto b = testsup::rand_tensor<float>({3, 4}, rng, 0, 1);
  const auto c = testsup::rand_tensor<float>({3, 4}, rng, 0, 1);
  const std::vector<int> y = {1, 0, 2};
  const auto v = fastat::pco_loss(m, a, b, c, y, 3.0f, true);
  const auto g = fastat::pco_loss_with_grads(m, a, b, c, y, 3.0f, true);
  CHECK(v.total == g.value.total);
  CHECK(v.ce == g.value.ce);
  CHECK(v.reg == g.value.reg);
}

TEST_CASE("losses: non-finite parameters abort with a message") {
  const auto spec = testsup::flat_spec(3, {}, 2);
  auto m = fastat::init_model<float>(spec, 12);
  m.params[0][0] = std::numeric_limits<float>::infinity();
  const Tensor<float> x({1, 3}, {0.5f, 0.5f, 0.5f});
  CHECK_THROWS_AS(
      (void)fastat::pco_loss(m, x, x, x, std::vector<int>{0}, 1.0f, true),
      std::runtime_error);
}
