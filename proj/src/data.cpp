#include "fastat/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fastat/rng.hpp"

namespace fastat {

int64_t Dataset::example_numel() const {
  int64_t n = 1;
  for (int d : example_shape) n *= d;
  return n;
}

Tensor<float> Dataset::example(int i) const {
  if (i < 0 || i >= size()) {
    throw std::out_of_range("dataset: example index " + std::to_string(i) + " out of range [0," +
                            std::to_string(size()) + ")");
  }
  std::vector<int> shape = example_shape;
  shape.insert(shape.begin(), 1);
  Tensor<float> t(shape);
  const int64_t per = example_numel();
  std::copy_n(&examples[int64_t(i) * per], per, t.data.begin());
  return t;
}

void Dataset::validate() const {
  if (static_cast<int>(labels.size()) != size()) {
    throw std::runtime_error("dataset '" + name + "': " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(size()) + " examples");
  }
  if (num_classes < 2) throw std::runtime_error("dataset '" + name + "': fewer than 2 classes");
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw std::runtime_error("dataset '" + name + "': label " + std::to_string(labels[i]) +
                               " at index " + std::to_string(i) + " outside [0," +
                               std::to_string(num_classes) + ")");
    }
  }
  for (int64_t i = 0; i < examples.numel(); ++i) {
    if (!(examples[i] >= 0.0f && examples[i] <= 1.0f)) {
      throw std::runtime_error("dataset '" + name + "': value " + std::to_string(examples[i]) +
                               " at flat index " + std::to_string(i) + " outside [0,1]");
    }
  }
}

Dataset gen_synthetic_blobs(int classes, int dim, int n_per_class, double spread, uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("blobs: need at least 2 classes");
  if (dim < 1) throw std::invalid_argument("blobs: need at least 1 dimension");
  if (classes > dim + 1) {
    throw std::invalid_argument("blobs: " + std::to_string(classes) +
                                " classes need feature dimension >= " + std::to_string(classes - 1));
  }
  if (n_per_class < 1) throw std::invalid_argument("blobs: need at least 1 example per class");
  if (spread < 0) throw std::invalid_argument("blobs: spread must be >= 0");

  // Class mean c: the origin for c=0, unit vector e_{c-1} otherwise, mapped
  // through t -> 0.2 + 0.6 t so points stay well inside [0,1].
  auto mean_at = [&](int c, int j) -> double {
    const double v = (c > 0 && j == c - 1) ? 1.0 : 0.0;
    return 0.2 + 0.6 * v;
  };

  Dataset ds;
  ds.name = "blobs";
  ds.num_classes = classes;
  ds.example_shape = {dim};
  const int n = classes * n_per_class;
  ds.examples = Tensor<float>({n, dim});
  ds.labels.resize(static_cast<size_t>(n));
  Rng rng = derive_rng(seed, Stream::blob_gen);
  int i = 0;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < n_per_class; ++k, ++i) {
      ds.labels[static_cast<size_t>(i)] = c;
      for (int j = 0; j < dim; ++j) {
        const double v = mean_at(c, j) + spread * rng.gaussian();
        ds.examples[int64_t(i) * dim + j] =
            static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
    }
  }
  ds.validate();
  return ds;
}

namespace {

// Seven-segment layout on a 28x28 canvas, segment order A B C D E F G.
// Each segment is a 2-pixel-thick stroke; rows/cols are inclusive.
struct SegBox {
  int r0, r1, c0, c1;
};

constexpr int kTop = 5, kMid = 13, kBot = 22, kLeft = 8, kRight = 19;

constexpr std::array<SegBox, 7> kSegments = {{
    {kTop, kTop + 1, kLeft, kRight},      // A top bar
    {kTop, kMid + 1, kRight - 1, kRight}, // B upper right
    {kMid, kBot + 1, kRight - 1, kRight}, // C lower right
    {kBot, kBot + 1, kLeft, kRight},      // D bottom bar
    {kMid, kBot + 1, kLeft, kLeft + 1},   // E lower left
    {kTop, kMid + 1, kLeft, kLeft + 1},   // F upper left
    {kMid, kMid + 1, kLeft, kRight},      // G middle bar
}};

// Segment mask per digit, bits in A..G order.
constexpr std::array<uint8_t, 10> kDigitSegs = {
    0b1111110,  // 0: ABCDEF
    0b0110000,  // 1: BC
    0b1101101,  // 2: ABDEG
    0b1111001,  // 3: ABCDG
    0b0110011,  // 4: BCFG
    0b1011011,  // 5: ACDFG
    0b1011111,  // 6: ACDEFG
    0b1110000,  // 7: ABC
    0b1111111,  // 8
    0b1111011,  // 9: ABCDFG
};

}  // namespace

Dataset gen_synthetic_digits(int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("digits: need at least 1 example");
  Dataset ds;
  ds.name = "digits";
  ds.num_classes = 10;
  ds.example_shape = {1, 28, 28};
  ds.examples = Tensor<float>({n, 1, 28, 28});
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int digit = i % 10;
    ds.labels[static_cast<size_t>(i)] = digit;
    // One stream per example: subsets and visit order never change pixels.
    Rng rng = derive_rng(seed, Stream::digit_gen, static_cast<uint64_t>(i));
    const int dx = static_cast<int>(rng.below(5)) - 2;
    const int dy = static_cast<int>(rng.below(5)) - 2;
    const double intensity = 0.75 + 0.25 * rng.next_u01();
    float* img = &ds.examples[int64_t(i) * 784];
    for (int p = 0; p < 784; ++p) img[p] = static_cast<float>(0.10 * rng.next_u01());
    const uint8_t segs = kDigitSegs[static_cast<size_t>(digit)];
    for (int s = 0; s < 7; ++s) {
      if (!(segs & (1u << (6 - s)))) continue;
      const SegBox& box = kSegments[static_cast<size_t>(s)];
      for (int r = box.r0 + dy; r <= box.r1 + dy; ++r) {
        for (int c = box.c0 + dx; c <= box.c1 + dx; ++c) {
          img[r * 28 + c] = static_cast<float>(intensity);
        }
      }
    }
  }
  ds.validate();
  return ds;
}

namespace {

uint32_t read_u32_be(std::istream& is, const std::string& path, const char* what) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) {
    throw std::runtime_error("idx: '" + path + "' truncated while reading " + what);
  }
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_u32_be(std::ostream& os, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<uint8_t> read_exact(std::istream& is, size_t n, const std::string& path,
                                const char* what) {
  std::vector<uint8_t> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw std::runtime_error("idx: '" + path + "' truncated, expected " + std::to_string(n) +
                             " bytes of " + what + ", got " + std::to_string(is.gcount()));
  }
  return buf;
}

std::string hex32(uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw std::runtime_error("idx: cannot open images file '" + images_path + "'");
  const uint32_t img_magic = read_u32_be(imgs, images_path, "magic");
  if (img_magic != 0x00000803u) {
    throw std::runtime_error("idx: images file '" + images_path + "' has magic " +
                             hex32(img_magic) + ", expected 0x00000803");
  }
  const uint32_t n = read_u32_be(imgs, images_path, "image count");
  const uint32_t h = read_u32_be(imgs, images_path, "image height");
  const uint32_t w = read_u32_be(imgs, images_path, "image width");
  if (h == 0 || w == 0 || h > 4096 || w > 4096) {
    throw std::runtime_error("idx: images file '" + images_path + "' has implausible size " +
                             std::to_string(h) + "x" + std::to_string(w));
  }
  const auto pixels =
      read_exact(imgs, size_t(n) * h * w, images_path, "pixel data");
  imgs.peek();
  if (!imgs.eof()) {
    throw std::runtime_error("idx: images file '" + images_path + "' has trailing bytes");
  }

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw std::runtime_error("idx: cannot open labels file '" + labels_path + "'");
  const uint32_t lab_magic = read_u32_be(labs, labels_path, "magic");
  if (lab_magic != 0x00000801u) {
    throw std::runtime_error("idx: labels file '" + labels_path + "' has magic " +
                             hex32(lab_magic) + ", expected 0x00000801");
  }
  const uint32_t n_lab = read_u32_be(labs, labels_path, "label count");
  if (n_lab != n) {
    throw std::runtime_error("idx: image count " + std::to_string(n) +
                             " does not match label count " + std::to_string(n_lab));
  }
  const auto label_bytes = read_exact(labs, n_lab, labels_path, "label data");
  labs.peek();
  if (!labs.eof()) {
    throw std::runtime_error("idx: labels file '" + labels_path + "' has trailing bytes");
  }

  Dataset ds;
  ds.name = "idx";
  ds.example_shape = {1, static_cast<int>(h), static_cast<int>(w)};
  ds.examples = Tensor<float>({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
  for (size_t i = 0; i < pixels.size(); ++i) {
    ds.examples[static_cast<int64_t>(i)] = static_cast<float>(pixels[i]) / 255.0f;
  }
  ds.labels.resize(n_lab);
  int max_label = 1;
  for (uint32_t i = 0; i < n_lab; ++i) {
    ds.labels[i] = label_bytes[i];
    max_label = std::max(max_label, int(label_bytes[i]));
  }
  ds.num_classes = max_label + 1;
  if (n > 0) ds.validate();
  return ds;
}

void save_idx(const std::string& images_path, const std::string& labels_path, const Dataset& ds) {
  if (ds.example_shape.size() != 3 || ds.example_shape[0] != 1) {
    throw std::invalid_argument("idx: writer needs single-channel (1,H,W) examples");
  }
  const int h = ds.example_shape[1], w = ds.example_shape[2];
  std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
  if (!imgs) throw std::runtime_error("idx: cannot open '" + images_path + "' for writing");
  write_u32_be(imgs, 0x00000803u);
  write_u32_be(imgs, static_cast<uint32_t>(ds.size()));
  write_u32_be(imgs, static_cast<uint32_t>(h));
  write_u32_be(imgs, static_cast<uint32_t>(w));
  for (int64_t i = 0; i < ds.examples.numel(); ++i) {
    const float v = ds.examples[i];
    const int b = static_cast<int>(std::lround(v * 255.0f));
    const uint8_t byte = static_cast<uint8_t>(std::min(255, std::max(0, b)));
    imgs.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!imgs) throw std::runtime_error("idx: write to '" + images_path + "' failed");

  std::ofstream labs(labels_path, std::ios::binary | std::ios::trunc);
  if (!labs) throw std::runtime_error("idx: cannot open '" + labels_path + "' for writing");
  write_u32_be(labs, 0x00000801u);
  write_u32_be(labs, static_cast<uint32_t>(ds.size()));
  for (int label : ds.labels) {
    const uint8_t byte = static_cast<uint8_t>(label);
    labs.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!labs) throw std::runtime_error("idx: write to '" + labels_path + "' failed");
}

Dataset load_cifar10_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cifar10: cannot open '" + path + "'");
  is.seekg(0, std::ios::end);
  const int64_t len = static_cast<int64_t>(is.tellg());
  is.seekg(0, std::ios::beg);
  constexpr int64_t kRecord = 3073;
  if (len % kRecord != 0) {
    throw std::runtime_error("cifar10: '" + path + "' length " + std::to_string(len) +
                             " is not a multiple of " + std::to_string(kRecord));
  }
  const int n = static_cast<int>(len / kRecord);
  Dataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.example_shape = {3, 32, 32};
  ds.examples = Tensor<float>({n, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  std::vector<uint8_t> rec(kRecord);
  for (int i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!is) throw std::runtime_error("cifar10: '" + path + "' truncated at record " +
                                      std::to_string(i));
    if (rec[0] >= 10) {
      throw std::runtime_error("cifar10: record " + std::to_string(i) + " has label " +
                               std::to_string(int(rec[0])) + " >= 10");
    }
    ds.labels[static_cast<size_t>(i)] = rec[0];
    float* out = &ds.examples[int64_t(i) * 3072];
    for (int p = 0; p < 3072; ++p) out[p] = static_cast<float>(rec[size_t(p) + 1]) / 255.0f;
  }
  if (n > 0) ds.validate();
  return ds;
}

void save_cifar10_binary(const std::string& path, const Dataset& ds) {
  if (ds.example_shape != std::vector<int>({3, 32, 32})) {
    throw std::invalid_argument("cifar10: writer needs (3,32,32) examples");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cifar10: cannot open '" + path + "' for writing");
  for (int i = 0; i < ds.size(); ++i) {
    const uint8_t label = static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]);
    os.write(reinterpret_cast<const char*>(&label), 1);
    const float* px = &ds.examples[int64_t(i) * 3072];
    for (int p = 0; p < 3072; ++p) {
      const int b = static_cast<int>(std::lround(px[p] * 255.0f));
      const uint8_t byte = static_cast<uint8_t>(std::min(255, std::max(0, b)));
      os.write(reinterpret_cast<const char*>(&byte), 1);
    }
  }
  if (!os) throw std::runtime_error("cifar10: write to '" + path + "' failed");
}

Dataset subset(const Dataset& ds, int start, int count) {
  if (start < 0 || count < 0 || start + count > ds.size()) {
    throw std::out_of_range("subset: range [" + std::to_string(start) + "," +
                            std::to_string(start + count) + ") outside dataset of " +
                            std::to_string(ds.size()));
  }
  Dataset out;
  out.name = ds.name + "[" + std::to_string(start) + ":" + std::to_string(start + count) + "]";
  out.num_classes = ds.num_classes;
  out.example_shape = ds.example_shape;
  std::vector<int> shape = ds.example_shape;
  shape.insert(shape.begin(), count);
  out.examples = Tensor<float>(shape);
  const int64_t per = ds.example_numel();
  std::copy_n(&ds.examples[int64_t(start) * per], int64_t(count) * per, out.examples.data.begin());
  out.labels.assign(ds.labels.begin() + start, ds.labels.begin() + start + count);
  return out;
}

Batch gather_batch(const Dataset& ds, const std::vector<int>& indices) {
  Batch b;
  b.indices = indices;
  std::vector<int> shape = ds.example_shape;
  shape.insert(shape.begin(), static_cast<int>(indices.size()));
  b.x = Tensor<float>(shape);
  b.y.resize(indices.size());
  const int64_t per = ds.example_numel();
  for (size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= ds.size()) {
      throw std::out_of_range("gather_batch: index " + std::to_string(i) + " outside dataset of " +
                              std::to_string(ds.size()));
    }
    std::copy_n(&ds.examples[int64_t(i) * per], per, b.x.data.begin() + int64_t(k) * per);
    b.y[k] = ds.labels[static_cast<size_t>(i)];
  }
  return b;
}

std::vector<Batch> batch_iter(const Dataset& ds, int batch_size, int epoch, uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  const int n = ds.size();
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = derive_rng(seed, Stream::shuffle, static_cast<uint64_t>(epoch));
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  std::vector<Batch> batches;
  for (int lo = 0; lo < n; lo += batch_size) {
    const int hi = std::min(n, lo + batch_size);
    batches.push_back(
        gather_batch(ds, std::vector<int>(perm.begin() + lo, perm.begin() + hi)));
  }
  return batches;
}

}  // namespace fastat
