#include "fastat/metrics.hpp"

#include <stdexcept>

#include "fastat/rng.hpp"

namespace fastat {

OverfitVerdict detect_catastrophic_overfitting(const std::vector<EpochMetrics>& history,
                                               const DetectorConfig& cfg) {
  if (history.empty()) {
    throw std::invalid_argument("overfit detector: empty metric history");
  }
  for (size_t e = 0; e < history.size(); ++e) {
    const EpochMetrics& m = history[e];
    if (m.pgd10_acc < cfg.pgd_floor && m.clean_acc > cfg.clean_floor) {
      return {true, m.epoch, OverfitVerdict::Reason::collapse};
    }
    if (e > 0) {
      const EpochMetrics& prev = history[e - 1];
      if (prev.pgd10_acc - m.pgd10_acc > cfg.drop && m.fgsm_acc > prev.fgsm_acc) {
        return {true, m.epoch, OverfitVerdict::Reason::spike};
      }
    }
  }
  return {};
}

double eval_accuracy(const Model<float>& model, const Dataset& ds,
                     const std::optional<AttackConfig<float>>& attack, int batch_size,
                     uint64_t seed) {
  if (ds.size() == 0) throw std::invalid_argument("eval_accuracy: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("eval_accuracy: batch_size must be >= 1");
  int hits = 0;
  int batch_index = 0;
  for (int lo = 0; lo < ds.size(); lo += batch_size, ++batch_index) {
    const int hi = std::min(ds.size(), lo + batch_size);
    std::vector<int> idx(static_cast<size_t>(hi - lo));
    for (int i = lo; i < hi; ++i) idx[static_cast<size_t>(i - lo)] = i;
    Batch b = gather_batch(ds, idx);
    Tensor<float> x_eval = b.x;
    if (attack.has_value() && attack->epsilon > 0.0f && attack->steps > 0) {
      Rng rng = derive_rng(seed, Stream::eval_attack, static_cast<uint64_t>(batch_index));
      x_eval = pgd_attack(model, b.x, b.y, *attack, rng);
    }
    const Tensor<float> logits = forward_logits(model, x_eval);
    const int c = logits.dim(1);
    for (int r = 0; r < b.size(); ++r) {
      int best = 0;
      for (int k = 1; k < c; ++k) {
        if (logits[int64_t(r) * c + k] > logits[int64_t(r) * c + best]) best = k;
      }
      if (best == b.y[static_cast<size_t>(r)]) ++hits;
    }
  }
  return static_cast<double>(hits) / ds.size();
}

}  // namespace fastat
