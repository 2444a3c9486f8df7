#pragma once

// Shared reference implementations for the test suite. Everything here is
// written independently of the library internals: plain loops, long double
// accumulation, no reuse of the kernels under test.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastat/model.hpp"
#include "fastat/rng.hpp"
#include "fastat/tensor.hpp"

namespace testsup {

inline double rel_err(double a, double b) {
  const double d = std::fabs(a - b);
  return d / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

// ---- scalar references ----

inline std::vector<double> ref_softmax(const std::vector<double>& z) {
  long double m = z[0];
  for (double v : z) m = std::max<long double>(m, v);
  long double denom = 0;
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) denom += expl(static_cast<long double>(z[i]) - m);
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = static_cast<double>(expl(static_cast<long double>(z[i]) - m) / denom);
  }
  return p;
}

// Mean cross-entropy over rows of a (B, C) logit matrix.
inline double ref_ce_mean(const std::vector<std::vector<double>>& logits,
                          const std::vector<int>& labels) {
  long double total = 0;
  for (size_t b = 0; b < logits.size(); ++b) {
    const auto& z = logits[b];
    long double m = z[0];
    for (double v : z) m = std::max<long double>(m, v);
    long double denom = 0;
    for (double v : z) denom += expl(static_cast<long double>(v) - m);
    const long double logp =
        static_cast<long double>(z[static_cast<size_t>(labels[b])]) - m - logl(denom);
    total -= logp;
  }
  return static_cast<double>(total / static_cast<long double>(logits.size()));
}

inline double ref_msd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("ref_msd: bad sizes");
  long double acc = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const long double d = static_cast<long double>(p[i]) - static_cast<long double>(q[i]);
    acc += d * d;
  }
  return static_cast<double>(acc / static_cast<long double>(p.size()));
}

// ---- tensor helpers ----

template <typename S>
fastat::Tensor<S> rand_tensor(const std::vector<int>& shape, fastat::Rng& rng, double lo,
                              double hi) {
  fastat::Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// Values bounded away from zero, so relu kinks stay far from the finite
// difference step.
template <typename S>
fastat::Tensor<S> rand_tensor_nonzero(const std::vector<int>& shape, fastat::Rng& rng,
                                      double mag_lo = 0.1, double mag_hi = 1.0) {
  fastat::Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(mag_lo, mag_hi);
    t[i] = static_cast<S>(rng.next_u01() < 0.5 ? -mag : mag);
  }
  return t;
}

inline std::vector<std::vector<double>> rows_of(const fastat::Tensor<double>& m) {
  std::vector<std::vector<double>> rows(static_cast<size_t>(m.dim(0)));
  const int c = m.dim(1);
  for (int b = 0; b < m.dim(0); ++b) {
    rows[static_cast<size_t>(b)].assign(&m[int64_t(b) * c], &m[int64_t(b) * c] + c);
  }
  return rows;
}

inline std::vector<double> flat_of(const fastat::Tensor<double>& t) {
  return std::vector<double>(&t[0], &t[0] + t.numel());
}

// ---- model helpers ----

inline fastat::ModelSpec flat_spec(int in_dim, std::vector<int> hidden, int classes) {
  fastat::ModelSpec s;
  s.arch = fastat::ModelSpec::Arch::mlp;
  s.channels = 1;
  s.height = 1;
  s.width = in_dim;
  s.num_classes = classes;
  s.mlp_hidden = std::move(hidden);
  return s;
}

inline fastat::ModelSpec image_spec(int c, int h, int w, int classes, int c1, int c2,
                                    int fc = 0) {
  fastat::ModelSpec s;
  s.arch = fastat::ModelSpec::Arch::conv;
  s.channels = c;
  s.height = h;
  s.width = w;
  s.num_classes = classes;
  s.conv_c1 = c1;
  s.conv_c2 = c2;
  s.conv_fc = fc;
  return s;
}

template <typename S>
std::vector<double> get_params(const fastat::Model<S>& m) {
  std::vector<double> flat;
  for (const auto& p : m.params) {
    for (int64_t i = 0; i < p.numel(); ++i) flat.push_back(static_cast<double>(p[i]));
  }
  return flat;
}

template <typename S>
void set_params(fastat::Model<S>& m, const std::vector<double>& flat) {
  size_t k = 0;
  for (auto& p : m.params) {
    for (int64_t i = 0; i < p.numel(); ++i) p[i] = static_cast<S>(flat[k++]);
  }
  if (k != flat.size()) throw std::invalid_argument("set_params: size mismatch");
}

// ---- finite differences ----

// Central difference gradient of f with respect to the entries of x.
template <typename F>
fastat::Tensor<double> fd_input_grad(const fastat::Tensor<double>& x, F f, double h = 1e-6) {
  fastat::Tensor<double> g(x.shape);
  fastat::Tensor<double> probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// Central difference gradient of a scalar loss of the model parameters.
template <typename S, typename F>
std::vector<double> fd_param_grad(fastat::Model<S> model, F loss_of_model, double h = 1e-6) {
  std::vector<double> theta = get_params(model);
  std::vector<double> g(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    set_params(model, theta);
    const double fp = loss_of_model(model);
    theta[i] = keep - h;
    set_params(model, theta);
    const double fm = loss_of_model(model);
    theta[i] = keep;
    set_params(model, theta);
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// ---- brute force attack oracle ----

// Max mean cross-entropy over all 2^d vertices of the L-inf box around x for
// a single example. Enumerates every sign pattern.
template <typename EvalFn>
double vertex_max_loss(const fastat::Tensor<double>& x, double eps, EvalFn loss_at) {
  const int d = static_cast<int>(x.numel());
  if (d > 20) throw std::invalid_argument("vertex_max_loss: dimension too large to enumerate");
  double best = -std::numeric_limits<double>::infinity();
  fastat::Tensor<double> probe = x;
  for (uint64_t mask = 0; mask < (uint64_t(1) << d); ++mask) {
    for (int i = 0; i < d; ++i) {
      probe[i] = x[i] + (((mask >> i) & 1u) ? eps : -eps);
    }
    best = std::max(best, loss_at(probe));
  }
  return best;
}

}  // namespace testsup
