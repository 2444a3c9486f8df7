#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fastat/autodiff.hpp"
#include "fastat/rng.hpp"
#include "fastat/tensor.hpp"

namespace fastat {

/// Architecture and input geometry. Inputs are (B,C,H,W) pixel tensors in
/// [0,1]; the MLP flattens them, the CNN consumes them directly.
struct ModelSpec {
  enum class Arch : uint8_t { mlp, conv };

  Arch arch = Arch::mlp;
  int channels = 1;
  int height = 28;
  int width = 28;
  int num_classes = 10;

  std::vector<int> mlp_hidden = {128, 64};

  // conv(c1)-relu-pool, conv(c2)-relu-pool, [fc(conv_fc)-relu,] linear
  int conv_c1 = 16;
  int conv_c2 = 32;
  int conv_fc = 0;

  int input_dim() const { return channels * height * width; }

  void validate() const {
    if (channels <= 0 || height <= 0 || width <= 0) {
      throw std::invalid_argument("model spec: non-positive input geometry");
    }
    if (num_classes < 2) throw std::invalid_argument("model spec: need at least 2 classes");
    if (arch == Arch::mlp) {
      for (int h : mlp_hidden) {
        if (h <= 0) throw std::invalid_argument("model spec: non-positive hidden width");
      }
    } else {
      if (conv_c1 <= 0 || conv_c2 <= 0 || conv_fc < 0) {
        throw std::invalid_argument("model spec: bad conv widths");
      }
      if (height / 4 == 0 || width / 4 == 0) {
        throw std::invalid_argument("model spec: input too small for two 2x2 poolings");
      }
    }
  }
};

/// A model is an ordered list of named parameter tensors plus the spec that
/// gives them meaning. Order is fixed by construction and is part of the
/// checkpoint contract.
template <typename S>
struct Model {
  ModelSpec spec;
  std::vector<std::string> names;
  std::vector<Tensor<S>> params;

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
  }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("model: no parameter named '" + name + "'");
  }
};

namespace detail {

// Layer shapes in construction order, so init and checkpoint validation agree.
inline std::vector<std::pair<std::string, std::vector<int>>> layer_plan(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, std::vector<int>>> plan;
  if (spec.arch == ModelSpec::Arch::mlp) {
    int in = spec.input_dim();
    for (size_t i = 0; i < spec.mlp_hidden.size(); ++i) {
      const int out = spec.mlp_hidden[i];
      const std::string base = "fc" + std::to_string(i);
      plan.push_back({base + ".w", {in, out}});
      plan.push_back({base + ".b", {out}});
      in = out;
    }
    plan.push_back({"out.w", {in, spec.num_classes}});
    plan.push_back({"out.b", {spec.num_classes}});
  } else {
    plan.push_back({"conv1.w", {spec.conv_c1, spec.channels, 3, 3}});
    plan.push_back({"conv1.b", {spec.conv_c1}});
    plan.push_back({"conv2.w", {spec.conv_c2, spec.conv_c1, 3, 3}});
    plan.push_back({"conv2.b", {spec.conv_c2}});
    int in = spec.conv_c2 * (spec.height / 4) * (spec.width / 4);
    if (spec.conv_fc > 0) {
      plan.push_back({"fc.w", {in, spec.conv_fc}});
      plan.push_back({"fc.b", {spec.conv_fc}});
      in = spec.conv_fc;
    }
    plan.push_back({"out.w", {in, spec.num_classes}});
    plan.push_back({"out.b", {spec.num_classes}});
  }
  return plan;
}

// fan-in of a weight tensor: input features for (I,O), C*kh*kw for (O,C,kh,kw)
inline int64_t fan_in(const std::vector<int>& shape) {
  if (shape.size() == 2) return shape[0];
  if (shape.size() == 4) return int64_t(shape[1]) * shape[2] * shape[3];
  throw std::invalid_argument("fan_in: unexpected weight rank " + std::to_string(shape.size()));
}

}  // namespace detail

/// He-normal weights (std = sqrt(2/fan_in)), zero biases. Each parameter
/// draws from its own derived stream, so adding a layer does not shift the
/// draws of earlier ones.
template <typename S>
Model<S> init_model(const ModelSpec& spec, uint64_t seed) {
  Model<S> m;
  m.spec = spec;
  const auto plan = detail::layer_plan(spec);
  for (size_t i = 0; i < plan.size(); ++i) {
    const auto& [name, shape] = plan[i];
    Tensor<S> t(shape);
    const bool is_weight = name.size() >= 2 && name.substr(name.size() - 2) == ".w";
    if (is_weight) {
      Rng rng = derive_rng(seed, Stream::param_init, static_cast<uint64_t>(i));
      const double std = std::sqrt(2.0 / static_cast<double>(detail::fan_in(shape)));
      for (int64_t j = 0; j < t.numel(); ++j) t[j] = static_cast<S>(rng.gaussian() * std);
    }
    m.names.push_back(name);
    m.params.push_back(std::move(t));
  }
  return m;
}

/// Parameter leaves registered on a tape, in model order. Register once per
/// tape; several forward branches may share the same leaves.
template <typename S>
struct TapedParams {
  std::vector<typename Tape<S>::NodeId> ids;
};

template <typename S>
TapedParams<S> register_params(Tape<S>& tape, const Model<S>& model) {
  TapedParams<S> tp;
  tp.ids.reserve(model.params.size());
  for (const auto& p : model.params) {
    tp.ids.push_back(tape.leaf(p, Tape<S>::LeafKind::param));
  }
  return tp;
}

/// Appends the model's forward computation to `tape`, reading weights from
/// already-registered parameter leaves. Returns the logits node.
template <typename S>
typename Tape<S>::NodeId forward_on_tape(Tape<S>& tape, const Model<S>& model,
                                         const TapedParams<S>& tp, typename Tape<S>::NodeId x) {
  const ModelSpec& spec = model.spec;
  if (tp.ids.size() != model.params.size()) {
    throw std::invalid_argument("forward: registered parameter count does not match model");
  }
  auto pid = [&](const char* name) { return tp.ids[static_cast<size_t>(model.index_of(name))]; };

  const Tensor<S>& xv = tape.value(x);
  typename Tape<S>::NodeId h = x;
  if (spec.arch == ModelSpec::Arch::mlp) {
    if (xv.ndim() != 2) h = tape.flatten(x);
    if (tape.value(h).dim(1) != spec.input_dim()) {
      throw std::invalid_argument("forward: input " + xv.shape_str() + " does not flatten to " +
                                  std::to_string(spec.input_dim()) + " features");
    }
    for (size_t i = 0; i < spec.mlp_hidden.size(); ++i) {
      const std::string base = "fc" + std::to_string(i);
      h = tape.matmul(h, pid((base + ".w").c_str()));
      h = tape.add_rowvec(h, pid((base + ".b").c_str()));
      h = tape.relu(h);
    }
  } else {
    if (xv.ndim() != 4 || xv.dim(1) != spec.channels || xv.dim(2) != spec.height ||
        xv.dim(3) != spec.width) {
      throw std::invalid_argument("forward: input " + xv.shape_str() + " does not match (B," +
                                  std::to_string(spec.channels) + "," + std::to_string(spec.height) +
                                  "," + std::to_string(spec.width) + ")");
    }
    h = tape.conv2d(x, pid("conv1.w"), pid("conv1.b"));
    h = tape.relu(h);
    h = tape.maxpool2d(h);
    h = tape.conv2d(h, pid("conv2.w"), pid("conv2.b"));
    h = tape.relu(h);
    h = tape.maxpool2d(h);
    h = tape.flatten(h);
    if (spec.conv_fc > 0) {
      h = tape.matmul(h, pid("fc.w"));
      h = tape.add_rowvec(h, pid("fc.b"));
      h = tape.relu(h);
    }
  }
  h = tape.matmul(h, pid("out.w"));
  h = tape.add_rowvec(h, pid("out.b"));
  return h;
}

/// Inference-only forward. Builds a throwaway tape.
template <typename S>
Tensor<S> forward_logits(const Model<S>& model, const Tensor<S>& x) {
  Tape<S> tape;
  auto tp = register_params(tape, model);
  auto in = tape.leaf(x, Tape<S>::LeafKind::constant);
  return tape.value(forward_on_tape(tape, model, tp, in));
}

/// Softmax probability the model assigns to each example's true class,
/// clamped into the open interval (0,1) so downstream mixing weights built
/// from it stay strictly interior even after rounding.
template <typename S>
Tensor<S> confidence_true_class(const Model<S>& model, const Tensor<S>& x,
                                const std::vector<int>& labels) {
  const Tensor<S> logits = forward_logits(model, x);
  const Tensor<S> p = detail::softmax_rows(logits);
  const int b = p.dim(0), c = p.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw std::invalid_argument("confidence: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(b));
  }
  const S lim = S(8) * std::numeric_limits<S>::epsilon();
  Tensor<S> out({b});
  for (int r = 0; r < b; ++r) {
    const int y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= c) {
      throw std::invalid_argument("confidence: label " + std::to_string(y) + " out of range [0," +
                                  std::to_string(c) + ")");
    }
    out[r] = std::min(S(1) - lim, std::max(lim, p[int64_t(r) * c + y]));
  }
  return out;
}

/// Mean top-1 accuracy of logits against labels. Argmax ties go to the lower
/// class index.
template <typename S>
double accuracy(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("accuracy: expected 2-D logits, got " + logits.shape_str());
  }
  const int b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw std::invalid_argument("accuracy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(b));
  }
  int hit = 0;
  for (int r = 0; r < b; ++r) {
    int best = 0;
    for (int i = 1; i < c; ++i) {
      if (logits[int64_t(r) * c + i] > logits[int64_t(r) * c + best]) best = i;
    }
    if (best == labels[static_cast<size_t>(r)]) ++hit;
  }
  return b == 0 ? 0.0 : static_cast<double>(hit) / b;
}

}  // namespace fastat
