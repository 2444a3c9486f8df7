#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fastat/data.hpp"
#include "fastat/metrics.hpp"
#include "fastat/model.hpp"
#include "fastat/trainers.hpp"

namespace fastat {

/// Where training data comes from. Synthetic kinds generate in memory;
/// file-backed kinds load at run start.
struct DataConfig {
  enum class Kind { blobs, digits, idx, cifar10 };
  Kind kind = Kind::blobs;

  int blobs_classes = 3;
  int blobs_dim = 16;
  int blobs_n_per_class = 200;
  double blobs_spread = 0.06;

  int digits_n = 2500;

  std::string idx_images;
  std::string idx_labels;
  std::string cifar_path;

  // 0 = use everything for training. When a nonzero train_count leaves
  // examples over, evaluation uses the held-out slice after it; otherwise it
  // reuses the training slice. eval_count 0 caps the eval set at 1000.
  int train_count = 0;
  int eval_count = 0;
};

struct ExperimentConfig {
  DataConfig data;
  ModelSpec model;  // input geometry is overwritten by the loaded dataset
  bool arch_explicit = false;
  TrainConfig train;
  int eval_batch = 128;
  int eval_pgd_steps = 10;
  std::string out_dir = "run";
  int checkpoint_every = 0;  // extra numbered state snapshots every K epochs; 0 = none

  void validate() const;
};

/// Parses the flat dotted key=value config format (# comments, blank lines
/// ignored), applies overrides of the same shape, and validates. Unknown keys
/// and malformed values report the exact key and line.
ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);
ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);

/// The full effective configuration as ordered key=value pairs (the same keys
/// parse_config accepts). Echoed into summary.json.
std::vector<std::pair<std::string, std::string>> config_to_pairs(const ExperimentConfig& cfg);

/// Materializes the train/eval split described by cfg.data.
struct DataSplit {
  Dataset train;
  Dataset eval;
};
DataSplit load_data(const ExperimentConfig& cfg);

/// Model spec with input geometry filled in from the dataset.
ModelSpec resolve_model_spec(const ExperimentConfig& cfg, const Dataset& train);

struct RunResult {
  int exit_status = 0;
  std::vector<EpochMetrics> history;
  OverfitVerdict overfit;
  std::string error;  // nonempty when exit_status != 0
};

/// Runs (or resumes) the configured experiment. Writes into cfg.out_dir:
/// metrics.csv (appending on resume), model_best.fatb / model_last.fatb,
/// state_last.fatb (for resume), and summary.json. stop_after > 0 limits how
/// many epochs this invocation executes, leaving a resumable state behind.
RunResult run_experiment(const ExperimentConfig& cfg, bool resume = false, int stop_after = 0,
                         bool quiet = false);

/// metrics.csv schema helpers shared by the writer, the detector CLI and the
/// plot emitter.
extern const char* kMetricsHeader;
std::string metrics_row(const EpochMetrics& m);
std::vector<EpochMetrics> parse_metrics_csv(const std::string& path);

/// Reshapes metrics.csv into tidy (epoch,series,value) rows.
/// kind: "acc_vs_epoch" (clean/fgsm/pgd10 series) or "delta_norm".
std::string emit_plot_data(const std::vector<EpochMetrics>& history, const std::string& kind);

std::string overfit_to_json(const OverfitVerdict& v);

}  // namespace fastat
