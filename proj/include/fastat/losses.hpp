#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fastat/autodiff.hpp"
#include "fastat/model.hpp"
#include "fastat/tensor.hpp"

namespace fastat {

/// Mean cross-entropy over the batch, stable log-sum-exp. Shares its kernel
/// with the tape op so value paths and gradient paths agree bitwise.
template <typename S>
S ce_loss(const Tensor<S>& logits, const std::vector<int>& labels) {
  return detail::ce_value(logits, labels);
}

/// Mean over batch and classes of the squared difference. The regularizer's
/// distance between two output distributions.
template <typename S>
S l1_msd(const Tensor<S>& p, const Tensor<S>& q) {
  detail::require_same_shape(p, q, "l1_msd");
  if (p.numel() == 0) throw std::invalid_argument("l1_msd: empty tensors");
  S acc = S(0);
  for (int64_t i = 0; i < p.numel(); ++i) {
    const S d = p[i] - q[i];
    acc += d * d;
  }
  return acc / static_cast<S>(p.numel());
}

/// Mean per-example L2 norm of (x_adv - x_clean).
template <typename S>
double perturbation_l2_norm(const Tensor<S>& x_adv, const Tensor<S>& x_clean) {
  detail::require_same_shape(x_adv, x_clean, "perturbation_l2_norm");
  if (x_adv.ndim() < 1 || x_adv.dim(0) == 0) return 0.0;
  const int b = x_adv.dim(0);
  const int64_t per = x_adv.numel() / b;
  double total = 0.0;
  for (int r = 0; r < b; ++r) {
    double sq = 0.0;
    for (int64_t i = 0; i < per; ++i) {
      const double d = static_cast<double>(x_adv[int64_t(r) * per + i]) -
                       static_cast<double>(x_clean[int64_t(r) * per + i]);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / b;
}

template <typename S>
struct PcoLossValue {
  S total;
  S ce;
  S reg;  // the bracketed difference, unweighted; may be negative
};

template <typename S>
struct PcoLossGrads {
  PcoLossValue<S> value;
  std::vector<Tensor<S>> param_grads;  // model order
};

namespace detail {

// CE(f(x_train), y) + beta * [ msd(D(x_curr), D(x_prev)) - msd(D(x_train), D(x_curr)) ]
// where D is softmax output (or raw logits when probability_space=false).
// x_* enter as constants; gradients flow through all three forward passes.
template <typename S>
PcoLossGrads<S> pco_loss_impl(const Model<S>& model, const Tensor<S>& x_train,
                              const Tensor<S>& x_curr, const Tensor<S>& x_prev,
                              const std::vector<int>& labels, S beta, bool probability_space,
                              bool want_grads) {
  if (!(beta >= S(0))) throw std::invalid_argument("pco_loss: beta must be >= 0");
  require_same_shape(x_train, x_curr, "pco_loss");
  require_same_shape(x_train, x_prev, "pco_loss");

  Tape<S> tape;
  auto tp = register_params(tape, model);
  const auto cleaf = [&](const Tensor<S>& x) { return tape.leaf(x, Tape<S>::LeafKind::constant); };

  const auto z_train = forward_on_tape(tape, model, tp, cleaf(x_train));
  const auto ce_node = tape.ce_mean(z_train, labels);

  PcoLossGrads<S> out;
  out.value.ce = tape.value(ce_node)[0];

  typename Tape<S>::NodeId total_node;
  if (beta == S(0)) {
    // The regularizer contributes nothing to the loss or its gradient; keep
    // the value for reporting but leave it off the tape.
    total_node = ce_node;
    const Tensor<S> z_curr = forward_logits(model, x_curr);
    const Tensor<S> z_prev = forward_logits(model, x_prev);
    const Tensor<S> z_tr = tape.value(z_train);
    if (probability_space) {
      const Tensor<S> p_curr = softmax_rows(z_curr);
      out.value.reg =
          l1_msd(p_curr, softmax_rows(z_prev)) - l1_msd(softmax_rows(z_tr), p_curr);
    } else {
      out.value.reg = l1_msd(z_curr, z_prev) - l1_msd(z_tr, z_curr);
    }
    out.value.total = out.value.ce;
  } else {
    const auto z_curr = forward_on_tape(tape, model, tp, cleaf(x_curr));
    const auto z_prev = forward_on_tape(tape, model, tp, cleaf(x_prev));
    typename Tape<S>::NodeId d_train = z_train, d_curr = z_curr, d_prev = z_prev;
    if (probability_space) {
      d_train = tape.softmax(z_train);
      d_curr = tape.softmax(z_curr);
      d_prev = tape.softmax(z_prev);
    }
    const auto m_gap = tape.msd(d_curr, d_prev);
    const auto m_pull = tape.msd(d_train, d_curr);
    total_node = tape.combine({{S(1), ce_node}, {beta, m_gap}, {-beta, m_pull}});
    out.value.reg = tape.value(m_gap)[0] - tape.value(m_pull)[0];
    out.value.total = tape.value(total_node)[0];
  }
  if (!std::isfinite(static_cast<double>(out.value.total))) {
    throw std::runtime_error("pco_loss: non-finite total loss");
  }
  if (want_grads) {
    tape.backward(total_node, Tensor<S>({1}, {S(1)}), GradRequest{true, false});
    out.param_grads.reserve(tp.ids.size());
    for (auto id : tp.ids) out.param_grads.push_back(tape.grad(id));
  }
  return out;
}

}  // namespace detail

template <typename S>
PcoLossValue<S> pco_loss(const Model<S>& model, const Tensor<S>& x_train, const Tensor<S>& x_curr,
                         const Tensor<S>& x_prev, const std::vector<int>& labels, S beta,
                         bool probability_space = true) {
  return detail::pco_loss_impl(model, x_train, x_curr, x_prev, labels, beta, probability_space,
                               false)
      .value;
}

template <typename S>
PcoLossGrads<S> pco_loss_with_grads(const Model<S>& model, const Tensor<S>& x_train,
                                    const Tensor<S>& x_curr, const Tensor<S>& x_prev,
                                    const std::vector<int>& labels, S beta,
                                    bool probability_space = true) {
  return detail::pco_loss_impl(model, x_train, x_curr, x_prev, labels, beta, probability_space,
                               true);
}

/// Plain cross-entropy loss and parameter gradients at x. The baseline
/// trainers' whole objective.
template <typename S>
struct CeLossGrads {
  S loss;
  std::vector<Tensor<S>> param_grads;
};

template <typename S>
CeLossGrads<S> ce_loss_with_grads(const Model<S>& model, const Tensor<S>& x,
                                  const std::vector<int>& labels) {
  Tape<S> tape;
  auto tp = register_params(tape, model);
  auto in = tape.leaf(x, Tape<S>::LeafKind::constant);
  auto loss = tape.ce_mean(forward_on_tape(tape, model, tp, in), labels);
  tape.backward(loss, Tensor<S>({1}, {S(1)}), GradRequest{true, false});
  CeLossGrads<S> out;
  out.loss = tape.value(loss)[0];
  out.param_grads.reserve(tp.ids.size());
  for (auto id : tp.ids) out.param_grads.push_back(tape.grad(id));
  return out;
}

}  // namespace fastat
