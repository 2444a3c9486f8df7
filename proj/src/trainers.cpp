#include "fastat/trainers.hpp"

#include <cmath>
#include <stdexcept>

#include "fastat/attacks.hpp"
#include "fastat/losses.hpp"
#include "fastat/model_io.hpp"
#include "fastat/rng.hpp"

namespace fastat {

const char* to_string(Method m) {
  switch (m) {
    case Method::PGD_AT: return "PGD_AT";
    case Method::FGSM_AT: return "FGSM_AT";
    case Method::FGSM_RS: return "FGSM_RS";
    case Method::FGSM_MEP: return "FGSM_MEP";
    case Method::FGSM_PCO: return "FGSM_PCO";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "PGD_AT") return Method::PGD_AT;
  if (s == "FGSM_AT") return Method::FGSM_AT;
  if (s == "FGSM_RS") return Method::FGSM_RS;
  if (s == "FGSM_MEP") return Method::FGSM_MEP;
  if (s == "FGSM_PCO") return Method::FGSM_PCO;
  throw std::invalid_argument("unknown method '" + s +
                              "'; supported: PGD_AT, FGSM_AT, FGSM_RS, FGSM_MEP, FGSM_PCO");
}

void TrainConfig::validate() const {
  if (!(epsilon >= 0.0f)) throw std::invalid_argument("train config: epsilon must be >= 0");
  if (!(gamma >= 1.0f)) throw std::invalid_argument("train config: gamma must be >= 1");
  if (!(beta >= 0.0f)) throw std::invalid_argument("train config: beta must be >= 0");
  if (!(mu >= 0.0f && mu <= 1.0f)) throw std::invalid_argument("train config: mu must be in [0,1]");
  if (pgd_steps < 0) throw std::invalid_argument("train config: pgd_steps must be >= 0");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("train config: momentum must be in [0,1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (!(lr_base > 0.0) || !(lr_max > 0.0) || !(lr_drop_factor > 0.0)) {
    throw std::invalid_argument("train config: learning rates must be > 0");
  }
  for (size_t i = 1; i < lr_drops.size(); ++i) {
    if (lr_drops[i] <= lr_drops[i - 1]) {
      throw std::invalid_argument("train config: lr_drops must be strictly increasing");
    }
  }
  if (lambda_override > 1.0f) {
    throw std::invalid_argument("train config: lambda_override must be <= 1");
  }
  if (mep_reset_every < 0) {
    throw std::invalid_argument("train config: mep_reset_every must be >= 0");
  }
}

// ---- PerturbationStore ----

void PerturbationStore::reset(Kind kind, int n) {
  if (n < 0) throw std::invalid_argument("store: negative size");
  kind_ = kind;
  n_ = n;
  init_.assign(static_cast<size_t>(n), 0);
  adv_.clear();
  eta_.clear();
  gmom_.clear();
  if (kind == Kind::pco) adv_.resize(static_cast<size_t>(n));
  if (kind == Kind::mep) {
    eta_.resize(static_cast<size_t>(n));
    gmom_.resize(static_cast<size_t>(n));
  }
}

void PerturbationStore::check_index(int i) const {
  if (i < 0 || i >= n_) {
    throw std::out_of_range("store: example index " + std::to_string(i) + " outside [0," +
                            std::to_string(n_) + ")");
  }
}

void PerturbationStore::require_kind(Kind k, const char* op) const {
  if (kind_ != k) {
    throw std::runtime_error(std::string("store: ") + op + " called on wrong store kind");
  }
}

bool PerturbationStore::has(int i) const {
  check_index(i);
  return init_[static_cast<size_t>(i)] != 0;
}

int PerturbationStore::tensors_per_example() const {
  switch (kind_) {
    case Kind::pco: return 1;
    case Kind::mep: return 2;
    default: return 0;
  }
}

int64_t PerturbationStore::stored_tensor_count() const {
  int64_t c = 0;
  for (uint8_t f : init_) c += f ? tensors_per_example() : 0;
  return c;
}

const Tensor<float>& PerturbationStore::adv(int i) const {
  require_kind(Kind::pco, "adv");
  check_index(i);
  if (!init_[static_cast<size_t>(i)]) {
    throw std::runtime_error("store: example " + std::to_string(i) + " not initialized");
  }
  return adv_[static_cast<size_t>(i)];
}

void PerturbationStore::set_adv(int i, Tensor<float> t) {
  require_kind(Kind::pco, "set_adv");
  check_index(i);
  adv_[static_cast<size_t>(i)] = std::move(t);
  init_[static_cast<size_t>(i)] = 1;
}

const Tensor<float>& PerturbationStore::eta(int i) const {
  require_kind(Kind::mep, "eta");
  check_index(i);
  if (!init_[static_cast<size_t>(i)]) {
    throw std::runtime_error("store: example " + std::to_string(i) + " not initialized");
  }
  return eta_[static_cast<size_t>(i)];
}

const Tensor<float>& PerturbationStore::momentum(int i) const {
  require_kind(Kind::mep, "momentum");
  check_index(i);
  if (!init_[static_cast<size_t>(i)]) {
    throw std::runtime_error("store: example " + std::to_string(i) + " not initialized");
  }
  return gmom_[static_cast<size_t>(i)];
}

void PerturbationStore::set_mep(int i, Tensor<float> eta, Tensor<float> momentum) {
  require_kind(Kind::mep, "set_mep");
  check_index(i);
  eta_[static_cast<size_t>(i)] = std::move(eta);
  gmom_[static_cast<size_t>(i)] = std::move(momentum);
  init_[static_cast<size_t>(i)] = 1;
}

// ---- schedule / optimizer ----

double lr_at(const TrainConfig& cfg, int epoch, int step_in_epoch, int steps_per_epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                                std::to_string(cfg.epochs) + ")");
  }
  if (cfg.schedule == LrSchedule::multistep) {
    double lr = cfg.lr_base;
    for (int drop : cfg.lr_drops) {
      if (epoch >= drop) lr *= cfg.lr_drop_factor;
    }
    return lr;
  }
  const int64_t total = int64_t(cfg.epochs) * steps_per_epoch;
  const int64_t g = int64_t(epoch) * steps_per_epoch + step_in_epoch;
  const int64_t half = total / 2;
  if (half == 0) return cfg.lr_max;
  if (g <= half) return cfg.lr_max * static_cast<double>(g) / static_cast<double>(half);
  return cfg.lr_max * static_cast<double>(total - g) / static_cast<double>(total - half);
}

void sgd_step(Model<float>& model, std::vector<Tensor<float>>& velocity,
              const std::vector<Tensor<float>>& grads, const TrainConfig& cfg, double lr) {
  if (grads.size() != model.params.size() || velocity.size() != model.params.size()) {
    throw std::invalid_argument("sgd_step: gradient/velocity count does not match model");
  }
  const float mom = static_cast<float>(cfg.momentum);
  const float wd = static_cast<float>(cfg.weight_decay);
  const float flr = static_cast<float>(lr);
  for (size_t p = 0; p < model.params.size(); ++p) {
    Tensor<float>& theta = model.params[p];
    Tensor<float>& v = velocity[p];
    const Tensor<float>& g = grads[p];
    if (!g.same_shape(theta)) {
      throw std::invalid_argument("sgd_step: gradient shape " + g.shape_str() +
                                  " does not match parameter '" + model.names[p] + "' " +
                                  theta.shape_str());
    }
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (!std::isfinite(g[i])) {
        throw std::runtime_error("sgd_step: non-finite gradient in parameter '" + model.names[p] +
                                 "' at flat index " + std::to_string(i));
      }
    }
    for (int64_t i = 0; i < theta.numel(); ++i) {
      v[i] = mom * v[i] + (g[i] + wd * theta[i]);
      theta[i] -= flr * v[i];
    }
  }
}

Tensor<float> adaptive_lambda(const Model<float>& model, const Tensor<float>& x_eval,
                              const std::vector<int>& labels) {
  return confidence_true_class(model, x_eval, labels);
}

void pco_fuse(TrainingBatchArtifacts& a, const TrainConfig& cfg) {
  detail::require_same_shape(a.x_prev, a.delta_t, "pco_fuse");
  const int b = a.x_prev.dim(0);
  if (a.lambda.ndim() != 1 || a.lambda.dim(0) != b) {
    throw std::invalid_argument("pco_fuse: lambda shape " + a.lambda.shape_str() +
                                " does not match batch of " + std::to_string(b));
  }
  const int64_t per = a.x_prev.numel() / b;
  a.x_am = Tensor<float>(a.x_prev.shape);
  a.x_train = Tensor<float>(a.x_prev.shape);
  for (int r = 0; r < b; ++r) {
    const float lam = a.lambda[r];
    if (!(lam >= 0.0f && lam <= 1.0f)) {
      throw std::invalid_argument("pco_fuse: lambda " + std::to_string(lam) + " for example " +
                                  std::to_string(r) + " outside [0,1]");
    }
    const int64_t off = int64_t(r) * per;
    for (int64_t i = 0; i < per; ++i) {
      a.x_am[off + i] = a.x_prev[off + i] + cfg.gamma * a.delta_t[off + i];
    }
    const float* anchor = nullptr;
    const float* target = nullptr;
    switch (cfg.fusion_mode) {
      case FusionMode::pco:
        anchor = &a.x_prev[off];
        target = &a.x_am[off];
        break;
      case FusionMode::amplified_clean:
        anchor = &a.x_clean[off];
        target = &a.x_am[off];
        break;
      case FusionMode::plain_clean:
        anchor = &a.x_clean[off];
        target = &a.x_curr[off];  // gamma plays no role in this variant
        break;
    }
    for (int64_t i = 0; i < per; ++i) {
      a.x_train[off + i] = lam * anchor[i] + (1.0f - lam) * target[i];
    }
  }
}

TrainState init_train_state(const ModelSpec& spec, const TrainConfig& cfg, int n_examples) {
  cfg.validate();
  TrainState st;
  st.epoch = 0;
  st.seed = cfg.seed;
  st.model = init_model<float>(spec, cfg.seed);
  st.velocity.reserve(st.model.params.size());
  for (const auto& p : st.model.params) st.velocity.emplace_back(p.shape);
  PerturbationStore::Kind kind = PerturbationStore::Kind::none;
  if (cfg.method == Method::FGSM_PCO) kind = PerturbationStore::Kind::pco;
  if (cfg.method == Method::FGSM_MEP) kind = PerturbationStore::Kind::mep;
  st.store.reset(kind, n_examples);
  return st;
}

namespace {

struct EpochAccum {
  double loss_sum = 0, ce_sum = 0, reg_sum = 0;
  double lam_sum = 0, lam_min = 2.0, lam_max = -1.0;
  bool any_lambda = false;
  double dl2_sum = 0;
  int64_t n = 0;
};

void copy_row_out(const Tensor<float>& batch, int row, Tensor<float>& dst) {
  const int64_t per = dst.numel();
  std::copy_n(&batch[int64_t(row) * per], per, dst.data.begin());
}

void copy_row_in(Tensor<float>& batch, int row, const Tensor<float>& src) {
  const int64_t per = src.numel();
  std::copy_n(src.data.begin(), per, batch.data.begin() + int64_t(row) * per);
}

Tensor<float> example_shaped(const Dataset& data) { return Tensor<float>(data.example_shape); }

// Pull x back into the epsilon-ball around x_clean, then into valid pixels.
Tensor<float> project_and_clamp(const Tensor<float>& x, const Tensor<float>& x_clean, float eps) {
  Tensor<float> out(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    float d = x[i] - x_clean[i];
    d = std::min(eps, std::max(-eps, d));
    out[i] = std::min(1.0f, std::max(0.0f, x_clean[i] + d));
  }
  return out;
}

void pco_batch(TrainState& st, const Dataset& data, const TrainConfig& cfg, const Batch& b,
               int batch_index, double lr, EpochAccum& acc, const BatchObserver& observer) {
  const int B = b.size();
  const int64_t per = data.example_numel();
  const bool projected = cfg.projection_mode == ProjectionMode::projected;

  TrainingBatchArtifacts a;
  a.epoch = st.epoch;
  a.batch_index = batch_index;
  a.indices = b.indices;
  a.x_clean = b.x;

  a.x_prev = Tensor<float>(b.x.shape);
  for (int k = 0; k < B; ++k) {
    const int i = b.indices[static_cast<size_t>(k)];
    if (!st.store.has(i)) {
      if (st.epoch != 0) {
        throw std::runtime_error("pco: store missing example " + std::to_string(i) + " at epoch " +
                                 std::to_string(st.epoch) + " (shuffling or indexing bug)");
      }
      Tensor<float> x0 = example_shaped(data);
      Rng rng = derive_rng(cfg.seed, Stream::store_init, static_cast<uint64_t>(i), 0);
      for (int64_t j = 0; j < per; ++j) {
        const float noise = static_cast<float>(
            rng.uniform(-static_cast<double>(cfg.epsilon), static_cast<double>(cfg.epsilon)));
        float v = b.x[int64_t(k) * per + j] + noise;
        if (projected) v = std::min(1.0f, std::max(0.0f, v));
        x0[j] = v;
      }
      st.store.set_adv(i, std::move(x0));
    }
    const Tensor<float>& prev = st.store.adv(i);
    if (prev.numel() != per) {
      throw std::runtime_error("pco: store entry for example " + std::to_string(i) + " has shape " +
                               prev.shape_str() + ", batch expects " + std::to_string(per) +
                               " elements");
    }
    copy_row_in(a.x_prev, k, prev);
  }

  // One-step signed gradient anchored at the stored adversarial example.
  Tensor<float> grad = ce_input_grad(st.model)(a.x_prev, b.y);
  detail::check_input_grad(grad, "pco one-step attack");
  a.g_t = sign(grad);
  a.delta_t = scale(a.g_t, cfg.epsilon);
  a.x_curr = add(a.x_prev, a.delta_t);

  if (cfg.lambda_override >= 0.0f) {
    a.lambda = Tensor<float>::full({B}, cfg.lambda_override);
  } else {
    a.lambda = adaptive_lambda(st.model, a.x_curr, b.y);
  }

  pco_fuse(a, cfg);

  // Store is updated before the parameter step, so the loss's x_curr matches
  // what the next epoch will read back as x_prev.
  a.x_curr_stored = projected ? project_and_clamp(a.x_curr, a.x_clean, cfg.epsilon) : a.x_curr;
  for (int k = 0; k < B; ++k) {
    Tensor<float> row = example_shaped(data);
    copy_row_out(a.x_curr_stored, k, row);
    st.store.set_adv(b.indices[static_cast<size_t>(k)], std::move(row));
  }

  a.x_train_used = projected ? project_and_clamp(a.x_train, a.x_clean, cfg.epsilon) : a.x_train;
  if (projected) {
    assert_linf_budget(a.x_train_used, a.x_clean, cfg.epsilon, "pco x_train");
    assert_linf_budget(a.x_curr_stored, a.x_clean, cfg.epsilon, "pco store update");
  }

  if (observer) observer(a);

  const auto lg = pco_loss_with_grads(st.model, a.x_train_used, a.x_curr_stored, a.x_prev, b.y,
                                      cfg.beta, cfg.probability_space);
  sgd_step(st.model, st.velocity, lg.param_grads, cfg, lr);

  acc.loss_sum += static_cast<double>(lg.value.total) * B;
  acc.ce_sum += static_cast<double>(lg.value.ce) * B;
  acc.reg_sum += static_cast<double>(lg.value.reg) * B;
  for (int k = 0; k < B; ++k) {
    const double lam = a.lambda[k];
    acc.lam_sum += lam;
    acc.lam_min = std::min(acc.lam_min, lam);
    acc.lam_max = std::max(acc.lam_max, lam);
  }
  acc.any_lambda = true;
  acc.dl2_sum += perturbation_l2_norm(a.x_train_used, a.x_clean) * B;
  acc.n += B;
}

void mep_batch(TrainState& st, const Dataset& data, const TrainConfig& cfg, const Batch& b,
               int batch_index, double lr, EpochAccum& acc) {
  (void)batch_index;
  const int B = b.size();
  const int64_t per = data.example_numel();
  const bool projected = cfg.projection_mode == ProjectionMode::projected;
  const float alpha = cfg.alpha();

  Tensor<float> eta(b.x.shape), gmom(b.x.shape);
  for (int k = 0; k < B; ++k) {
    const int i = b.indices[static_cast<size_t>(k)];
    const bool reinit = (st.epoch == 0 && !st.store.has(i)) ||
                        (cfg.mep_reset_every > 0 && st.epoch > 0 &&
                         st.epoch % cfg.mep_reset_every == 0);
    if (reinit) {
      Tensor<float> e0 = example_shaped(data);
      Tensor<float> m0 = example_shaped(data);
      Rng rng = derive_rng(cfg.seed, Stream::store_init, static_cast<uint64_t>(i),
                           static_cast<uint64_t>(st.epoch));
      for (int64_t j = 0; j < per; ++j) {
        float v = static_cast<float>(
            rng.uniform(-static_cast<double>(cfg.epsilon), static_cast<double>(cfg.epsilon)));
        if (projected) {
          const float xc = b.x[int64_t(k) * per + j];
          v = std::min(1.0f, std::max(0.0f, xc + v)) - xc;
        }
        e0[j] = v;
      }
      st.store.set_mep(i, std::move(e0), std::move(m0));
    } else if (!st.store.has(i)) {
      throw std::runtime_error("mep: store missing example " + std::to_string(i) + " at epoch " +
                               std::to_string(st.epoch) + " (shuffling or indexing bug)");
    }
    copy_row_in(eta, k, st.store.eta(i));
    copy_row_in(gmom, k, st.store.momentum(i));
  }

  Tensor<float> x_at = add(b.x, eta);
  Tensor<float> grad = ce_input_grad(st.model)(x_at, b.y);
  detail::check_input_grad(grad, "mep one-step attack");
  const Tensor<float> g_c = sign(grad);

  Tensor<float> gmom_new(gmom.shape);
  for (int64_t i = 0; i < gmom.numel(); ++i) gmom_new[i] = cfg.mu * gmom[i] + g_c[i];

  // Training perturbation uses the raw current gradient; the persisted one
  // follows the sign of the accumulated momentum.
  Tensor<float> x_train(b.x.shape);
  for (int64_t i = 0; i < eta.numel(); ++i) {
    float d = eta[i] + alpha * g_c[i];
    d = std::min(cfg.epsilon, std::max(-cfg.epsilon, d));
    float v = b.x[i] + d;
    if (projected) v = std::min(1.0f, std::max(0.0f, v));
    x_train[i] = v;
  }

  Tensor<float> eta_new(eta.shape);
  for (int64_t i = 0; i < eta.numel(); ++i) {
    const float s = gmom_new[i] > 0.0f ? 1.0f : (gmom_new[i] < 0.0f ? -1.0f : 0.0f);
    float d = eta[i] + alpha * s;
    d = std::min(cfg.epsilon, std::max(-cfg.epsilon, d));
    if (projected) {
      d = std::min(1.0f, std::max(0.0f, b.x[i] + d)) - b.x[i];
    }
    eta_new[i] = d;
  }

  for (int k = 0; k < B; ++k) {
    Tensor<float> er = example_shaped(data);
    Tensor<float> mr = example_shaped(data);
    copy_row_out(eta_new, k, er);
    copy_row_out(gmom_new, k, mr);
    st.store.set_mep(b.indices[static_cast<size_t>(k)], std::move(er), std::move(mr));
  }

  if (projected) assert_linf_budget(x_train, b.x, cfg.epsilon, "mep x_train");

  const auto lg = ce_loss_with_grads(st.model, x_train, b.y);
  if (!std::isfinite(static_cast<double>(lg.loss))) {
    throw std::runtime_error("mep: non-finite training loss");
  }
  sgd_step(st.model, st.velocity, lg.param_grads, cfg, lr);

  acc.loss_sum += static_cast<double>(lg.loss) * B;
  acc.ce_sum += static_cast<double>(lg.loss) * B;
  acc.dl2_sum += perturbation_l2_norm(x_train, b.x) * B;
  acc.n += B;
}

void baseline_batch(TrainState& st, const TrainConfig& cfg, const Batch& b, int batch_index,
                    double lr, EpochAccum& acc) {
  const bool projected = cfg.projection_mode == ProjectionMode::projected;
  AttackConfig<float> atk;
  atk.epsilon = cfg.epsilon;
  atk.clamp_pixels = projected;
  switch (cfg.method) {
    case Method::FGSM_AT:
      atk.alpha = cfg.epsilon;
      atk.steps = 1;
      atk.random_start = false;
      break;
    case Method::FGSM_RS:
      atk.alpha = cfg.alpha();
      atk.steps = 1;
      atk.random_start = true;
      break;
    case Method::PGD_AT:
      atk.alpha = cfg.alpha();
      atk.steps = cfg.pgd_steps;
      atk.random_start = true;
      break;
    default:
      throw std::logic_error("baseline_batch: not a baseline method");
  }
  Rng rng = derive_rng(cfg.seed, Stream::attack_init, static_cast<uint64_t>(st.epoch),
                       static_cast<uint64_t>(batch_index));
  const Tensor<float> x_adv = pgd_attack(st.model, b.x, b.y, atk, rng);

  const auto lg = ce_loss_with_grads(st.model, x_adv, b.y);
  if (!std::isfinite(static_cast<double>(lg.loss))) {
    throw std::runtime_error("baseline: non-finite training loss");
  }
  sgd_step(st.model, st.velocity, lg.param_grads, cfg, lr);

  const int B = b.size();
  acc.loss_sum += static_cast<double>(lg.loss) * B;
  acc.ce_sum += static_cast<double>(lg.loss) * B;
  acc.dl2_sum += perturbation_l2_norm(x_adv, b.x) * B;
  acc.n += B;
}

}  // namespace

EpochMetrics train_epoch(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                         const BatchObserver& observer) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train_epoch: empty dataset");
  if (state.epoch < 0 || state.epoch >= cfg.epochs) {
    throw std::invalid_argument("train_epoch: epoch " + std::to_string(state.epoch) +
                                " outside configured range [0," + std::to_string(cfg.epochs) + ")");
  }
  const PerturbationStore::Kind want = cfg.method == Method::FGSM_PCO
                                           ? PerturbationStore::Kind::pco
                                           : (cfg.method == Method::FGSM_MEP
                                                  ? PerturbationStore::Kind::mep
                                                  : PerturbationStore::Kind::none);
  if (state.store.kind() != want || state.store.size() != data.size()) {
    throw std::runtime_error("train_epoch: perturbation store does not match method/dataset "
                             "(was the state initialized for a different run?)");
  }

  const auto batches = batch_iter(data, cfg.batch_size, state.epoch, cfg.seed);
  const int spe = static_cast<int>(batches.size());
  EpochAccum acc;
  EpochMetrics m;
  m.epoch = state.epoch;
  m.lr = lr_at(cfg, state.epoch, 0, spe);

  for (int bi = 0; bi < spe; ++bi) {
    const double lr = lr_at(cfg, state.epoch, bi, spe);
    try {
      switch (cfg.method) {
        case Method::FGSM_PCO:
          pco_batch(state, data, cfg, batches[static_cast<size_t>(bi)], bi, lr, acc, observer);
          break;
        case Method::FGSM_MEP:
          mep_batch(state, data, cfg, batches[static_cast<size_t>(bi)], bi, lr, acc);
          break;
        default:
          baseline_batch(state, cfg, batches[static_cast<size_t>(bi)], bi, lr, acc);
          break;
      }
    } catch (const std::exception& ex) {
      throw std::runtime_error("epoch " + std::to_string(state.epoch) + " batch " +
                               std::to_string(bi) + ": " + ex.what());
    }
  }

  const double n = static_cast<double>(acc.n);
  m.train_loss = acc.loss_sum / n;
  m.ce_component = acc.ce_sum / n;
  m.reg_component = acc.reg_sum / n;
  if (acc.any_lambda) {
    m.lambda_mean = acc.lam_sum / n;
    m.lambda_min = acc.lam_min;
    m.lambda_max = acc.lam_max;
  }
  m.delta_l2_mean = acc.dl2_sum / n;

  state.epoch += 1;
  return m;
}

// ---- checkpointing ----

void save_train_state(const std::string& path, const TrainState& state) {
  TensorFile<float> tf;
  tf.meta.emplace_back("state_epoch", state.epoch);
  tf.meta.emplace_back("state_seed", static_cast<int64_t>(state.seed));
  tf.meta.emplace_back("store_kind", static_cast<int64_t>(state.store.kind()));
  tf.meta.emplace_back("store_n", state.store.size());
  detail::encode_spec(tf, state.model.spec);
  for (size_t p = 0; p < state.model.params.size(); ++p) {
    tf.tensors.emplace_back("param." + state.model.names[p], state.model.params[p]);
  }
  for (size_t p = 0; p < state.model.params.size(); ++p) {
    tf.tensors.emplace_back("vel." + state.model.names[p], state.velocity[p]);
  }
  for (int i = 0; i < state.store.size(); ++i) {
    if (!state.store.has(i)) continue;
    if (state.store.kind() == PerturbationStore::Kind::pco) {
      tf.tensors.emplace_back("store.adv." + std::to_string(i), state.store.adv(i));
    } else if (state.store.kind() == PerturbationStore::Kind::mep) {
      tf.tensors.emplace_back("store.eta." + std::to_string(i), state.store.eta(i));
      tf.tensors.emplace_back("store.gmom." + std::to_string(i), state.store.momentum(i));
    }
  }
  write_tensor_file(path, tf);
}

TrainState load_train_state(const std::string& path) {
  const TensorFile<float> tf = read_tensor_file<float>(path);
  TrainState st;
  st.epoch = static_cast<int>(tf.meta_value("state_epoch"));
  st.seed = static_cast<uint64_t>(tf.meta_value("state_seed"));
  st.model = model_from_tensor_file(tf, "param.");
  st.velocity.clear();
  for (const auto& name : st.model.names) {
    const Tensor<float>& v = tf.tensor("vel." + name);
    st.velocity.push_back(v);
  }
  const auto kind = static_cast<PerturbationStore::Kind>(tf.meta_value("store_kind"));
  const int n = static_cast<int>(tf.meta_value("store_n"));
  st.store.reset(kind, n);
  for (const auto& [name, t] : tf.tensors) {
    if (name.rfind("store.adv.", 0) == 0) {
      st.store.set_adv(std::stoi(name.substr(10)), t);
    } else if (name.rfind("store.eta.", 0) == 0) {
      const int i = std::stoi(name.substr(10));
      st.store.set_mep(i, t, tf.tensor("store.gmom." + std::to_string(i)));
    }
  }
  return st;
}

}  // namespace fastat
