#include <cmath>
#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "fastat/tensor.hpp"

using fastat::Tensor;

TEST_CASE("tensor: shape constructor zero fills") {
  Tensor<double> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
}

TEST_CASE("tensor: value constructor validates the element count") {
  CHECK_NOTHROW(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("tensor: full") {
  const auto t = Tensor<float>::full({3}, 2.5f);
  for (int64_t i = 0; i < 3; ++i) CHECK(t[i] == 2.5f);
}

TEST_CASE("tensor: elementwise ops require matching shapes") {
  Tensor<double> a({2, 2}), b({4});
  CHECK_THROWS_WITH_AS(fastat::add(a, b), doctest::Contains("add"), std::invalid_argument);
  CHECK_THROWS_AS(fastat::sub(a, b), std::invalid_argument);
  CHECK_THROWS_AS(fastat::mul(a, b), std::invalid_argument);
}

TEST_CASE("tensor: arithmetic values") {
  const Tensor<double> a({3}, {1, -2, 4});
  const Tensor<double> b({3}, {0.5, 3, -1});
  const auto s = fastat::add(a, b);
  CHECK(s[0] == 1.5);
  CHECK(s[1] == 1.0);
  CHECK(s[2] == 3.0);
  const auto d = fastat::sub(a, b);
  CHECK(d[1] == -5.0);
  const auto m = fastat::mul(a, b);
  CHECK(m[2] == -4.0);
  const auto sc = fastat::scale(a, -2.0);
  CHECK(sc[0] == -2.0);
  const auto off = fastat::add(a, 10.0);
  CHECK(off[1] == 8.0);
}

TEST_CASE("tensor: sign maps zero to zero") {
  const Tensor<double> a({4}, {-3.5, 0.0, 2.0, -0.0});
  const auto s = fastat::sign(a);
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 1.0);
  CHECK(s[3] == 0.0);
}

TEST_CASE("tensor: clamp") {
  const Tensor<double> a({3}, {-2, 0.5, 9});
  const auto c = fastat::clamp(a, 0.0, 1.0);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.5);
  CHECK(c[2] == 1.0);
  CHECK_THROWS_AS(fastat::clamp(a, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("tensor: reductions match a plain left-to-right loop") {
  fastat::Rng rng(5);
  Tensor<double> t({257});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1, 1);
  double acc = 0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += t[i];
  CHECK(fastat::sum(t) == acc);  // exact: same order, same type
  CHECK(fastat::mean(t) == acc / 257.0);
}

TEST_CASE("tensor: max_abs and linf_dist") {
  const Tensor<double> a({3}, {0.1, -0.7, 0.3});
  const Tensor<double> b({3}, {0.2, -0.2, 0.3});
  CHECK(fastat::max_abs(a) == 0.7);
  CHECK(fastat::linf_dist(a, b) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("tensor: mean of empty throws") {
  CHECK_THROWS_AS(fastat::mean(Tensor<double>({0})), std::invalid_argument);
}

TEST_CASE("tensor: non-finite results are rejected") {
  const Tensor<double> big = Tensor<double>::full({2}, std::numeric_limits<double>::max());
  CHECK_THROWS_WITH_AS(fastat::add(big, big), doctest::Contains("finite"), std::runtime_error);
}

TEST_CASE("tensor: shape_str appears in shape errors") {
  Tensor<double> a({2, 3}), b({3, 2});
  CHECK_THROWS_WITH_AS(fastat::add(a, b), doctest::Contains("(2,3)"), std::invalid_argument);
}
