#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fastat/attacks.hpp"
#include "fastat/data.hpp"
#include "fastat/model.hpp"

namespace fastat {

/// One row of the training log. wall_time_s is the only field allowed to
/// differ between reruns of the same seeded config.
struct EpochMetrics {
  int epoch = 0;
  double clean_acc = 0;
  double fgsm_acc = 0;
  double pgd10_acc = 0;
  double train_loss = 0;
  double ce_component = 0;
  double reg_component = 0;
  double lambda_mean = 0;
  double lambda_min = 0;
  double lambda_max = 0;
  double delta_l2_mean = 0;
  double lr = 0;
  double wall_time_s = 0;
};

struct OverfitVerdict {
  enum class Reason { none, collapse, spike };
  bool detected = false;
  int epoch = -1;  // first flagged epoch, -1 if none
  Reason reason = Reason::none;
};

inline const char* to_string(OverfitVerdict::Reason r) {
  switch (r) {
    case OverfitVerdict::Reason::collapse: return "collapse";
    case OverfitVerdict::Reason::spike: return "spike";
    default: return "none";
  }
}

/// Thresholds for the overfitting detector. Defaults follow the qualitative
/// shape of the phenomenon: robust accuracy near zero while clean accuracy
/// stays high, or a >20-point robust drop in a single epoch as the one-step
/// attack gets easier.
struct DetectorConfig {
  double pgd_floor = 0.05;
  double clean_floor = 0.5;
  double drop = 0.20;
};

/// Scans the history in epoch order and flags the first epoch where either
/// condition fires; collapse takes precedence over spike at the same epoch.
/// Causal: the verdict for epoch e reads nothing after e.
OverfitVerdict detect_catastrophic_overfitting(const std::vector<EpochMetrics>& history,
                                               const DetectorConfig& cfg = {});

/// Top-1 accuracy over the dataset, optionally under an attack. Pure: the
/// model and dataset are untouched, and the attack noise is derived from
/// (seed, batch index), so repeated calls agree exactly.
double eval_accuracy(const Model<float>& model, const Dataset& ds,
                     const std::optional<AttackConfig<float>>& attack = std::nullopt,
                     int batch_size = 128, uint64_t seed = 0);

}  // namespace fastat
