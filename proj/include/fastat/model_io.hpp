#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fastat/model.hpp"
#include "fastat/tensor.hpp"

namespace fastat {

/// Binary container for named tensors plus integer metadata. Little-endian,
/// no padding, entries written in the order given, so the same content always
/// produces the same bytes. Used for model checkpoints and full train state.
///
/// Layout: "FATB" | u32 version | u8 dtype(4=f32, 8=f64) |
///         u32 n_meta  | n_meta  x (u16 keylen, key, i64 value) |
///         u32 n_tensor| n_tensor x (u16 namelen, name, u8 ndim, i32 dims..., raw data)
template <typename S>
struct TensorFile {
  std::vector<std::pair<std::string, int64_t>> meta;
  std::vector<std::pair<std::string, Tensor<S>>> tensors;

  int64_t meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return v;
    }
    throw std::runtime_error("checkpoint: missing metadata key '" + key + "'");
  }

  bool has_meta(const std::string& key) const {
    for (const auto& [k, v] : meta) {
      if (k == key) return true;
    }
    return false;
  }

  const Tensor<S>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  }
};

namespace detail {

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "unexpected float widths");

// This codebase only targets little-endian hosts; raw tensor bytes are
// memcpy'd. The static check below trips on anything else.
inline void require_little_endian() {
  const uint32_t probe = 1;
  uint8_t b;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw std::runtime_error("checkpoint: big-endian hosts are not supported");
}

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw std::invalid_argument("checkpoint: name too long: " + s);
  write_raw(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  const uint16_t len = read_raw<uint16_t>(is, what);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  return s;
}

template <typename S>
constexpr uint8_t dtype_code() {
  return static_cast<uint8_t>(sizeof(S));
}

}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename S>
void write_tensor_file(const std::string& path, const TensorFile<S>& tf) {
  detail::require_little_endian();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write("FATB", 4);
  detail::write_raw(os, kCheckpointVersion);
  detail::write_raw(os, detail::dtype_code<S>());
  detail::write_raw(os, static_cast<uint32_t>(tf.meta.size()));
  for (const auto& [k, v] : tf.meta) {
    detail::write_string(os, k);
    detail::write_raw(os, v);
  }
  detail::write_raw(os, static_cast<uint32_t>(tf.tensors.size()));
  for (const auto& [name, t] : tf.tensors) {
    detail::write_string(os, name);
    detail::write_raw(os, static_cast<uint8_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) detail::write_raw(os, static_cast<int32_t>(t.dim(d)));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S))));
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

template <typename S>
TensorFile<S> read_tensor_file(const std::string& path) {
  detail::require_little_endian();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FATB", 4) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' is not a FATB file (bad magic)");
  }
  const uint32_t version = detail::read_raw<uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const uint8_t dtype = detail::read_raw<uint8_t>(is, "dtype");
  if (dtype != detail::dtype_code<S>()) {
    throw std::runtime_error("checkpoint: dtype code " + std::to_string(int(dtype)) +
                             " does not match requested element width " +
                             std::to_string(sizeof(S)));
  }
  TensorFile<S> tf;
  const uint32_t n_meta = detail::read_raw<uint32_t>(is, "meta count");
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::read_string(is, "meta key");
    const int64_t v = detail::read_raw<int64_t>(is, "meta value");
    tf.meta.emplace_back(std::move(k), v);
  }
  const uint32_t n_tensor = detail::read_raw<uint32_t>(is, "tensor count");
  for (uint32_t i = 0; i < n_tensor; ++i) {
    std::string name = detail::read_string(is, "tensor name");
    const uint8_t ndim = detail::read_raw<uint8_t>(is, "tensor rank");
    std::vector<int> shape(ndim);
    for (uint8_t d = 0; d < ndim; ++d) {
      const int32_t dim = detail::read_raw<int32_t>(is, "tensor dim");
      if (dim < 0) throw std::runtime_error("checkpoint: negative dimension in '" + name + "'");
      shape[d] = dim;
    }
    Tensor<S> t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S))));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data in '" + name + "'");
    tf.tensors.emplace_back(std::move(name), std::move(t));
  }
  is.peek();
  if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes after last tensor");
  return tf;
}

namespace detail {

template <typename S>
void encode_spec(TensorFile<S>& tf, const ModelSpec& spec) {
  tf.meta.emplace_back("arch", spec.arch == ModelSpec::Arch::mlp ? 0 : 1);
  tf.meta.emplace_back("channels", spec.channels);
  tf.meta.emplace_back("height", spec.height);
  tf.meta.emplace_back("width", spec.width);
  tf.meta.emplace_back("num_classes", spec.num_classes);
  tf.meta.emplace_back("mlp_depth", static_cast<int64_t>(spec.mlp_hidden.size()));
  for (size_t i = 0; i < spec.mlp_hidden.size(); ++i) {
    tf.meta.emplace_back("hidden." + std::to_string(i), spec.mlp_hidden[i]);
  }
  tf.meta.emplace_back("conv_c1", spec.conv_c1);
  tf.meta.emplace_back("conv_c2", spec.conv_c2);
  tf.meta.emplace_back("conv_fc", spec.conv_fc);
}

template <typename S>
ModelSpec decode_spec(const TensorFile<S>& tf) {
  ModelSpec spec;
  spec.arch = tf.meta_value("arch") == 0 ? ModelSpec::Arch::mlp : ModelSpec::Arch::conv;
  spec.channels = static_cast<int>(tf.meta_value("channels"));
  spec.height = static_cast<int>(tf.meta_value("height"));
  spec.width = static_cast<int>(tf.meta_value("width"));
  spec.num_classes = static_cast<int>(tf.meta_value("num_classes"));
  spec.mlp_hidden.clear();
  const int64_t depth = tf.meta_value("mlp_depth");
  for (int64_t i = 0; i < depth; ++i) {
    spec.mlp_hidden.push_back(static_cast<int>(tf.meta_value("hidden." + std::to_string(i))));
  }
  spec.conv_c1 = static_cast<int>(tf.meta_value("conv_c1"));
  spec.conv_c2 = static_cast<int>(tf.meta_value("conv_c2"));
  spec.conv_fc = static_cast<int>(tf.meta_value("conv_fc"));
  spec.validate();
  return spec;
}

}  // namespace detail

template <typename S>
void save_model(const std::string& path, const Model<S>& model) {
  TensorFile<S> tf;
  detail::encode_spec(tf, model.spec);
  for (size_t i = 0; i < model.params.size(); ++i) {
    tf.tensors.emplace_back(model.names[i], model.params[i]);
  }
  write_tensor_file(path, tf);
}

template <typename S>
Model<S> model_from_tensor_file(const TensorFile<S>& tf, const std::string& prefix = "") {
  Model<S> m;
  m.spec = detail::decode_spec(tf);
  const auto plan = detail::layer_plan(m.spec);
  for (const auto& [name, shape] : plan) {
    const Tensor<S>& t = tf.tensor(prefix + name);
    if (t.shape != shape) {
      throw std::runtime_error("checkpoint: tensor '" + prefix + name + "' has shape " +
                               t.shape_str() + ", expected " + Tensor<S>(shape).shape_str());
    }
    m.names.push_back(name);
    m.params.push_back(t);
  }
  return m;
}

template <typename S>
Model<S> load_model(const std::string& path) {
  return model_from_tensor_file(read_tensor_file<S>(path));
}

}  // namespace fastat
