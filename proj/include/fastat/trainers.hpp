#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fastat/data.hpp"
#include "fastat/metrics.hpp"
#include "fastat/model.hpp"
#include "fastat/tensor.hpp"

namespace fastat {

enum class Method { PGD_AT, FGSM_AT, FGSM_RS, FGSM_MEP, FGSM_PCO };
enum class ProjectionMode { faithful, projected };
enum class FusionMode { pco, amplified_clean, plain_clean };
enum class LrSchedule { multistep, cyclic };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
  Method method = Method::FGSM_PCO;
  float epsilon = 8.0f / 255.0f;
  float attack_alpha = -1.0f;  // <0: epsilon for one-step methods, epsilon/4 for PGD_AT
  int pgd_steps = 10;
  float gamma = 2.0f;  // amplification of the one-step perturbation before fusion
  float beta = 10.0f;  // regularization weight
  float mu = 0.3f;     // per-example gradient-momentum decay
  LrSchedule schedule = LrSchedule::multistep;
  double lr_base = 0.1;
  double lr_drop_factor = 0.1;
  std::vector<int> lr_drops = {100, 105};
  double lr_max = 0.2;  // cyclic peak
  int epochs = 110;
  int batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  uint64_t seed = 0;
  ProjectionMode projection_mode = ProjectionMode::projected;
  FusionMode fusion_mode = FusionMode::pco;
  // Test hook: fixes lambda to a constant instead of the confidence rule.
  // Negative means adaptive (the normal path).
  float lambda_override = -1.0f;
  int mep_reset_every = 0;  // re-initialize the per-example momentum state every N epochs; 0 = never
  bool probability_space = true;  // regularizer compares softmax outputs, not raw logits

  float alpha() const {
    if (attack_alpha >= 0.0f) return attack_alpha;
    return method == Method::PGD_AT ? epsilon / 4.0f : epsilon;
  }

  void validate() const;
};

/// Per-example adversarial state persisted across epochs. PCO keeps the
/// previous adversarial example (one tensor per example); MEP keeps the
/// perturbation and its gradient momentum (two). Keyed by dataset index;
/// shuffling changes visit order, never identity.
class PerturbationStore {
 public:
  enum class Kind { none, pco, mep };

  void reset(Kind kind, int n);
  Kind kind() const { return kind_; }
  int size() const { return n_; }
  bool has(int i) const;
  int tensors_per_example() const;
  int64_t stored_tensor_count() const;

  const Tensor<float>& adv(int i) const;
  void set_adv(int i, Tensor<float> t);

  const Tensor<float>& eta(int i) const;
  const Tensor<float>& momentum(int i) const;
  void set_mep(int i, Tensor<float> eta, Tensor<float> momentum);

 private:
  void check_index(int i) const;
  void require_kind(Kind k, const char* op) const;

  Kind kind_ = Kind::none;
  int n_ = 0;
  std::vector<uint8_t> init_;
  std::vector<Tensor<float>> adv_;   // pco
  std::vector<Tensor<float>> eta_;   // mep
  std::vector<Tensor<float>> gmom_;  // mep
};

struct TrainState {
  int epoch = 0;  // next epoch to run
  uint64_t seed = 0;
  Model<float> model;
  std::vector<Tensor<float>> velocity;  // SGD momentum buffers, model order
  PerturbationStore store;
};

/// Everything one fused-training batch produced, exposed for inspection.
/// x_train is the raw fusion result; x_train_used is what the loss actually
/// consumed (equal in faithful mode, projected/clamped otherwise), and
/// x_curr_stored is the store entry written for the next epoch.
struct TrainingBatchArtifacts {
  int epoch = 0;
  int batch_index = 0;
  std::vector<int> indices;
  Tensor<float> x_clean;
  Tensor<float> x_prev;
  Tensor<float> g_t;
  Tensor<float> delta_t;
  Tensor<float> x_am;
  Tensor<float> lambda;  // (B)
  Tensor<float> x_train;
  Tensor<float> x_curr;
  Tensor<float> x_train_used;
  Tensor<float> x_curr_stored;
};

using BatchObserver = std::function<void(const TrainingBatchArtifacts&)>;

/// Learning rate for a given position in the run. Multistep ignores the step
/// arguments; cyclic ramps linearly 0 -> lr_max -> 0 over the whole run.
double lr_at(const TrainConfig& cfg, int epoch, int step_in_epoch, int steps_per_epoch);

/// v <- momentum*v + (grad + weight_decay*theta); theta <- theta - lr*v.
/// Throws (naming the parameter) on a non-finite gradient.
void sgd_step(Model<float>& model, std::vector<Tensor<float>>& velocity,
              const std::vector<Tensor<float>>& grads, const TrainConfig& cfg, double lr);

/// Confidence the current model assigns to the true class at x_prev + delta_t,
/// detached: it scales the fusion but passes no gradient.
Tensor<float> adaptive_lambda(const Model<float>& model, const Tensor<float>& x_eval,
                              const std::vector<int>& labels);

/// Fills x_am and the raw fusion x_train from x_prev/delta_t/lambda under the
/// configured fusion variant.
void pco_fuse(TrainingBatchArtifacts& a, const TrainConfig& cfg);

TrainState init_train_state(const ModelSpec& spec, const TrainConfig& cfg, int n_examples);

/// Runs epoch state.epoch (dispatching on cfg.method), updates state in
/// place, increments state.epoch, and returns the training-side metric
/// fields (evaluation columns are filled by the caller).
EpochMetrics train_epoch(TrainState& state, const Dataset& data, const TrainConfig& cfg,
                         const BatchObserver& observer = {});

/// Bitwise train-state checkpointing (model + velocity + store + epoch).
void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path);

}  // namespace fastat
