#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fastat/model.hpp"
#include "fastat/rng.hpp"
#include "fastat/tensor.hpp"

namespace fastat {

/// L-inf attack parameters. epsilon is the ball radius in pixel units, alpha
/// the per-step size. steps=0 returns the initialized point unchanged.
template <typename S>
struct AttackConfig {
  S epsilon = S(8) / S(255);
  S alpha = S(8) / S(255);
  int steps = 1;
  bool random_start = false;
  bool clamp_pixels = true;
  uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= S(0))) throw std::invalid_argument("attack config: epsilon must be >= 0");
    if (!(alpha >= S(0))) throw std::invalid_argument("attack config: alpha must be >= 0");
    if (steps < 0) throw std::invalid_argument("attack config: steps must be >= 0");
  }
};

/// Evaluation presets. The iterative preset uses a quarter-of-epsilon step,
/// which reproduces the usual 2/255-at-8/255 pairing at any budget.
template <typename S>
AttackConfig<S> fgsm_eval_attack(S epsilon) {
  return AttackConfig<S>{epsilon, epsilon, 1, false, true, 0};
}

template <typename S>
AttackConfig<S> pgd_eval_attack(S epsilon, int steps) {
  return AttackConfig<S>{epsilon, epsilon / S(4), steps, true, true, 0};
}

/// Hook that supplies the attack's input gradient; defaults to cross-entropy.
template <typename S>
using InputGradFn =
    std::function<Tensor<S>(const Tensor<S>& x, const std::vector<int>& labels)>;

/// d/dx of mean cross-entropy under a frozen model. The gradient request asks
/// for the input only, so the tape skips all weight-gradient work.
template <typename S>
InputGradFn<S> ce_input_grad(const Model<S>& model) {
  return [&model](const Tensor<S>& x, const std::vector<int>& labels) {
    Tape<S> tape;
    auto tp = register_params(tape, model);
    auto in = tape.leaf(x, Tape<S>::LeafKind::input);
    auto logits = forward_on_tape(tape, model, tp, in);
    auto loss = tape.ce_mean(logits, labels);
    tape.backward(loss, Tensor<S>({1}, {S(1)}), GradRequest{false, true});
    return tape.grad(in);
  };
}

/// Mean cross-entropy of a frozen model at x. Used by attack oracles and the
/// evaluation loop.
template <typename S>
S ce_at(const Model<S>& model, const Tensor<S>& x, const std::vector<int>& labels) {
  return detail::ce_value(forward_logits(model, x), labels);
}

/// i.i.d. U[-epsilon, epsilon] noise.
template <typename S>
Tensor<S> random_init_uniform(const std::vector<int>& shape, S epsilon, Rng& rng) {
  if (!(epsilon >= S(0))) throw std::invalid_argument("random_init_uniform: epsilon must be >= 0");
  Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<S>(rng.uniform(-static_cast<double>(epsilon), static_cast<double>(epsilon)));
  }
  return t;
}

/// Clamp a perturbation into the L-inf ball. Idempotent.
template <typename S>
Tensor<S> project_linf(const Tensor<S>& delta, S epsilon) {
  if (!(epsilon >= S(0))) throw std::invalid_argument("project_linf: epsilon must be >= 0");
  return clamp(delta, -epsilon, epsilon);
}

/// Clamp to the valid pixel range [0,1].
template <typename S>
Tensor<S> clamp_pixels(const Tensor<S>& x) {
  return clamp(x, S(0), S(1));
}

namespace detail {

// Non-finite input gradients abort the attack, naming the offending example.
template <typename S>
void check_input_grad(const Tensor<S>& g, const char* where) {
  for (int64_t i = 0; i < g.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(g[i]))) {
      const int64_t per_example = g.dim(0) > 0 ? g.numel() / g.dim(0) : 1;
      throw std::runtime_error(std::string(where) + ": non-finite input gradient at batch index " +
                               std::to_string(per_example > 0 ? i / per_example : int64_t(0)));
    }
  }
}

}  // namespace detail

/// Always-on L-inf budget check. Tolerance is the budget plus one ulp at the
/// pixel scale, covering the rounding of (x + delta) - x.
template <typename S>
void assert_linf_budget(const Tensor<S>& x_adv, const Tensor<S>& x_clean, S epsilon,
                        const std::string& context) {
  detail::require_same_shape(x_adv, x_clean, "budget check");
  const S tol = epsilon + std::numeric_limits<S>::epsilon();
  S worst = S(0);
  int64_t worst_i = -1;
  for (int64_t i = 0; i < x_adv.numel(); ++i) {
    const S d = std::abs(x_adv[i] - x_clean[i]);
    if (d > worst) {
      worst = d;
      worst_i = i;
    }
  }
  if (worst > tol) {
    throw std::runtime_error(context + ": perturbation " + std::to_string(worst) +
                             " at flat index " + std::to_string(worst_i) + " exceeds budget " +
                             std::to_string(epsilon));
  }
}

template <typename S>
struct FgsmResult {
  Tensor<S> x_adv;
  Tensor<S> g;  // sign of the input gradient
};

/// Single signed-gradient step of size epsilon from x_anchor. Not projected
/// or pixel-clamped; the anchor itself is the ball center here.
template <typename S>
FgsmResult<S> fgsm_step(const Model<S>& model, const Tensor<S>& x_anchor,
                        const std::vector<int>& labels, S epsilon, InputGradFn<S> grad_fn = {}) {
  if (!(epsilon >= S(0))) throw std::invalid_argument("fgsm_step: epsilon must be >= 0");
  if (!grad_fn) grad_fn = ce_input_grad(model);
  Tensor<S> g = grad_fn(x_anchor, labels);
  detail::check_input_grad(g, "fgsm_step");
  g = sign(g);
  Tensor<S> x_adv(x_anchor.shape);
  for (int64_t i = 0; i < x_adv.numel(); ++i) x_adv[i] = x_anchor[i] + epsilon * g[i];
  assert_linf_budget(x_adv, x_anchor, epsilon, "fgsm_step");
  return {std::move(x_adv), std::move(g)};
}

/// Iterated projected signed-gradient attack around x_clean:
///   delta <- clamp(delta + alpha * sign(grad at x_clean + delta), [-eps, eps])
/// starting from uniform noise when random_start is set, zero otherwise.
template <typename S>
Tensor<S> pgd_attack(const Model<S>& model, const Tensor<S>& x_clean,
                     const std::vector<int>& labels, const AttackConfig<S>& cfg, Rng& rng,
                     InputGradFn<S> grad_fn = {}) {
  cfg.validate();
  if (!grad_fn) grad_fn = ce_input_grad(model);
  Tensor<S> delta = cfg.random_start ? random_init_uniform(x_clean.shape, cfg.epsilon, rng)
                                     : Tensor<S>(x_clean.shape);
  Tensor<S> x_adv(x_clean.shape);
  for (int step = 0; step < cfg.steps; ++step) {
    for (int64_t i = 0; i < x_adv.numel(); ++i) x_adv[i] = x_clean[i] + delta[i];
    Tensor<S> g = grad_fn(x_adv, labels);
    detail::check_input_grad(g, "pgd_attack");
    for (int64_t i = 0; i < delta.numel(); ++i) {
      S d = delta[i] + cfg.alpha * (g[i] > S(0) ? S(1) : (g[i] < S(0) ? S(-1) : S(0)));
      delta[i] = std::min(cfg.epsilon, std::max(-cfg.epsilon, d));
    }
  }
  for (int64_t i = 0; i < x_adv.numel(); ++i) x_adv[i] = x_clean[i] + delta[i];
  if (cfg.clamp_pixels) x_adv = clamp_pixels(x_adv);
  assert_linf_budget(x_adv, x_clean, cfg.epsilon, "pgd_attack");
  return x_adv;
}

/// Convenience overload seeding the init noise from cfg.seed.
template <typename S>
Tensor<S> pgd_attack(const Model<S>& model, const Tensor<S>& x_clean,
                     const std::vector<int>& labels, const AttackConfig<S>& cfg,
                     InputGradFn<S> grad_fn = {}) {
  Rng rng = derive_rng(cfg.seed, Stream::attack_init);
  return pgd_attack(model, x_clean, labels, cfg, rng, std::move(grad_fn));
}

}  // namespace fastat
