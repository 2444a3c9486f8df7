#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace fastat {

/// Dense row-major n-dimensional array. Values are immutable by convention
/// once an operation has produced the tensor; library code returns fresh
/// tensors instead of mutating inputs.
template <typename S>
struct Tensor {
  static_assert(std::is_floating_point_v<S>);

  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> shp) : shape(std::move(shp)) {
    data.assign(static_cast<size_t>(count(shape)), S(0));
  }

  Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
    if (count(shape) != static_cast<int64_t>(data.size())) {
      throw std::invalid_argument("tensor: shape " + shape_str() + " expects " +
                                  std::to_string(count(shape)) + " values, got " +
                                  std::to_string(data.size()));
    }
  }

  static Tensor full(std::vector<int> shp, S v) {
    Tensor t(std::move(shp));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static int64_t count(const std::vector<int>& shp) {
    int64_t n = 1;
    for (int d : shp) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }
};

/// Throws if any value is NaN or infinite. Library operations call this on
/// their outputs so a non-finite value surfaces where it was made, never
/// downstream.
template <typename S>
void ensure_finite(const Tensor<S>& t, const char* what) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) {
      throw std::runtime_error(std::string(what) + ": non-finite value at flat index " +
                               std::to_string(i));
    }
  }
}

namespace detail {
template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}
}  // namespace detail

// Elementwise vocabulary. Shapes must match exactly; the only broadcast is a
// scalar second operand (separate overloads). No silent shape coercion.

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  ensure_finite(out, "add");
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  ensure_finite(out, "sub");
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  ensure_finite(out, "mul");
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, S s) {
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
  ensure_finite(out, "add");
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  ensure_finite(out, "scale");
  return out;
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::min(std::max(a[i], lo), hi);
  return out;
}

/// sign(0) = 0.
template <typename S>
Tensor<S> sign(const Tensor<S>& t) {
  Tensor<S> out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = (t[i] > S(0)) ? S(1) : (t[i] < S(0)) ? S(-1) : S(0);
  return out;
}

// Reductions run in flat index order, always: summation order is part of the
// determinism contract.

template <typename S>
S sum(const Tensor<S>& t) {
  S acc = S(0);
  for (int64_t i = 0; i < t.numel(); ++i) acc += t[i];
  return acc;
}

template <typename S>
S mean(const Tensor<S>& t) {
  if (t.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return sum(t) / static_cast<S>(t.numel());
}

template <typename S>
S max_abs(const Tensor<S>& t) {
  S m = S(0);
  for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

/// max_i |a_i - b_i|
template <typename S>
S linf_dist(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "linf_dist");
  S m = S(0);
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fastat
