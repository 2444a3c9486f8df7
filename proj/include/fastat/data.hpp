#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fastat/tensor.hpp"

namespace fastat {

/// Immutable desk-scale dataset. Examples are (N, ...) with values in [0,1],
/// channel-first for images.
struct Dataset {
  std::string name;
  int num_classes = 0;
  std::vector<int> example_shape;  // shape of one example, e.g. {1,28,28} or {dim}
  Tensor<float> examples;          // (N, example_shape...)
  std::vector<int> labels;

  int size() const { return examples.ndim() == 0 ? 0 : examples.dim(0); }
  int64_t example_numel() const;
  /// Copy of example i with a leading batch axis of 1.
  Tensor<float> example(int i) const;
  void validate() const;
};

/// One training batch: gathered copies plus the dataset indices they came
/// from (the perturbation store is keyed by those indices).
struct Batch {
  std::vector<int> indices;
  Tensor<float> x;
  std::vector<int> y;
  int size() const { return static_cast<int>(indices.size()); }
};

/// Gaussian clusters centered at the corners of the standard simplex in
/// feature space ({0} and the unit vectors), affinely mapped into [0.2, 0.8].
/// Needs classes <= dim + 1. Points are clamped to [0,1].
Dataset gen_synthetic_blobs(int classes, int dim, int n_per_class, double spread, uint64_t seed);

/// Deterministic seven-segment digit glyphs on a 28x28 canvas with per-example
/// translation, stroke-intensity and background-noise jitter. Labels cycle
/// 0..9, so any prefix subset is close to class-balanced.
Dataset gen_synthetic_digits(int n, uint64_t seed);

/// IDX (big-endian) reader: images magic 0x00000803, labels magic 0x00000801.
/// Pixels are scaled to [0,1]. Wrong magic, truncation, and image/label count
/// mismatch each produce a distinct error.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// IDX writer, inverse of load_idx for single-channel images.
void save_idx(const std::string& images_path, const std::string& labels_path, const Dataset& ds);

/// CIFAR-10 binary reader: 3073-byte records of label byte + 3072
/// channel-major pixel bytes -> (3,32,32) in [0,1].
Dataset load_cifar10_binary(const std::string& path);

/// CIFAR-10 binary writer, inverse of load_cifar10_binary.
void save_cifar10_binary(const std::string& path, const Dataset& ds);

/// Examples [start, start+count) as a standalone dataset.
Dataset subset(const Dataset& ds, int start, int count);

/// Seeded full-epoch batching: a permutation derived from (seed, epoch),
/// sliced into batches, final short batch kept.
std::vector<Batch> batch_iter(const Dataset& ds, int batch_size, int epoch, uint64_t seed);

/// Gather arbitrary indices into a batch.
Batch gather_batch(const Dataset& ds, const std::vector<int>& indices);

}  // namespace fastat
