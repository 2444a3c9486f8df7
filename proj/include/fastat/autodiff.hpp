#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fastat/tensor.hpp"

namespace fastat {

/// Which gradients a backward pass must produce. At least one flag must be
/// set; the tape prunes work for everything else (an attack that only needs
/// input gradients never runs the weight-gradient kernels).
struct GradRequest {
  bool wrt_params = false;
  bool wrt_input = false;
};

namespace detail {

// Stable row softmax, shared by the tape op, the losses module and the
// confidence accessor so their values agree exactly.
template <typename S>
void softmax_row(const S* z, S* p, int n) {
  S m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  S denom = S(0);
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(z[i] - m);
    denom += p[i];
  }
  for (int i = 0; i < n; ++i) p[i] /= denom;
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& logits) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("softmax: expected 2-D logits, got " + logits.shape_str());
  }
  const int b = logits.dim(0), c = logits.dim(1);
  Tensor<S> p(logits.shape);
  for (int r = 0; r < b; ++r) softmax_row(&logits[int64_t(r) * c], &p[int64_t(r) * c], c);
  return p;
}

// mean over rows of (logsumexp(z_r) - z_r[y_r])
template <typename S>
S ce_value(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("cross_entropy: expected 2-D logits, got " + logits.shape_str());
  }
  const int b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(b));
  }
  S acc = S(0);
  for (int r = 0; r < b; ++r) {
    const int y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(c) + ")");
    }
    const S* z = &logits[int64_t(r) * c];
    S m = z[0];
    for (int i = 1; i < c; ++i) m = std::max(m, z[i]);
    S lse = S(0);
    for (int i = 0; i < c; ++i) lse += std::exp(z[i] - m);
    acc += m + std::log(lse) - z[y];
  }
  return acc / static_cast<S>(b);
}

}  // namespace detail

/// Single-use recording of a forward computation. Nodes are appended in
/// execution order; backward() walks them once in reverse. Not thread-safe;
/// one tape belongs to one computation on one thread.
template <typename S>
class Tape {
 public:
  using NodeId = int32_t;

  enum class LeafKind : uint8_t { constant, param, input };

  NodeId leaf(Tensor<S> value, LeafKind kind) {
    Node n;
    n.op = Op::leaf;
    n.leaf_kind = kind;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// (B,I) x (I,O) -> (B,O)
  NodeId matmul(NodeId a, NodeId w) {
    const Tensor<S>& av = value(a);
    const Tensor<S>& wv = value(w);
    if (av.ndim() != 2 || wv.ndim() != 2 || av.dim(1) != wv.dim(0)) {
      throw std::invalid_argument("matmul: incompatible shapes " + av.shape_str() + " x " +
                                  wv.shape_str());
    }
    const int b = av.dim(0), in = av.dim(1), out = wv.dim(1);
    Tensor<S> r({b, out});
    for (int row = 0; row < b; ++row) {
      const S* arow = &av[int64_t(row) * in];
      S* rrow = &r[int64_t(row) * out];
      for (int i = 0; i < in; ++i) {
        const S s = arow[i];
        const S* wrow = &wv[int64_t(i) * out];
        for (int o = 0; o < out; ++o) rrow[o] += s * wrow[o];
      }
    }
    ensure_finite(r, "matmul");
    return push(make_node(Op::matmul, {a, w}, std::move(r)));
  }

  /// (B,O) + (O), bias broadcast over rows
  NodeId add_rowvec(NodeId a, NodeId v) {
    const Tensor<S>& av = value(a);
    const Tensor<S>& vv = value(v);
    if (av.ndim() != 2 || vv.ndim() != 1 || av.dim(1) != vv.dim(0)) {
      throw std::invalid_argument("add_rowvec: incompatible shapes " + av.shape_str() + " + " +
                                  vv.shape_str());
    }
    const int b = av.dim(0), out = av.dim(1);
    Tensor<S> r(av.shape);
    for (int row = 0; row < b; ++row) {
      for (int o = 0; o < out; ++o) r[int64_t(row) * out + o] = av[int64_t(row) * out + o] + vv[o];
    }
    ensure_finite(r, "add_rowvec");
    return push(make_node(Op::add_rowvec, {a, v}, std::move(r)));
  }

  NodeId relu(NodeId a) {
    const Tensor<S>& av = value(a);
    Tensor<S> r(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) r[i] = av[i] > S(0) ? av[i] : S(0);
    return push(make_node(Op::relu, {a}, std::move(r)));
  }

  /// 3x3 convolution, stride 1, zero same-padding, with per-channel bias.
  /// x: (B,C,H,W), w: (O,C,3,3), b: (O) -> (B,O,H,W)
  NodeId conv2d(NodeId x, NodeId w, NodeId bias) {
    const Tensor<S>& xv = value(x);
    const Tensor<S>& wv = value(w);
    const Tensor<S>& bv = value(bias);
    if (xv.ndim() != 4) {
      throw std::invalid_argument("conv2d: expected 4-D input, got " + xv.shape_str());
    }
    if (wv.ndim() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3) {
      throw std::invalid_argument("conv2d: expected (O,C,3,3) kernel, got " + wv.shape_str());
    }
    if (wv.dim(1) != xv.dim(1)) {
      throw std::invalid_argument("conv2d: kernel channels " + wv.shape_str() +
                                  " do not match input " + xv.shape_str());
    }
    if (bv.ndim() != 1 || bv.dim(0) != wv.dim(0)) {
      throw std::invalid_argument("conv2d: bias " + bv.shape_str() + " does not match kernel " +
                                  wv.shape_str());
    }
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3), O = wv.dim(0);
    Tensor<S> r({B, O, H, W});
    for (int b = 0; b < B; ++b) {
      for (int oc = 0; oc < O; ++oc) {
        S* oplane = &r[((int64_t(b) * O + oc) * H) * W];
        const S bias_v = bv[oc];
        for (int64_t i = 0; i < int64_t(H) * W; ++i) oplane[i] = bias_v;
        for (int ic = 0; ic < C; ++ic) {
          const S* iplane = &xv[((int64_t(b) * C + ic) * H) * W];
          for (int ky = 0; ky < 3; ++ky) {
            const int ylo = std::max(0, 1 - ky), yhi = std::min(H, H + 1 - ky);
            for (int kx = 0; kx < 3; ++kx) {
              const S kw = wv[((int64_t(oc) * C + ic) * 3 + ky) * 3 + kx];
              const int xlo = std::max(0, 1 - kx), xhi = std::min(W, W + 1 - kx);
              for (int y = ylo; y < yhi; ++y) {
                const S* irow = iplane + int64_t(y + ky - 1) * W + (kx - 1);
                S* orow = oplane + int64_t(y) * W;
                for (int xx = xlo; xx < xhi; ++xx) orow[xx] += kw * irow[xx];
              }
            }
          }
        }
      }
    }
    ensure_finite(r, "conv2d");
    return push(make_node(Op::conv2d, {x, w, bias}, std::move(r)));
  }

  /// 2x2 max pooling, stride 2, floor semantics. Ties resolved to the first
  /// element in row-major window order, so backward routing is deterministic.
  NodeId maxpool2d(NodeId x) {
    const Tensor<S>& xv = value(x);
    if (xv.ndim() != 4) {
      throw std::invalid_argument("maxpool2d: expected 4-D input, got " + xv.shape_str());
    }
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Ho = H / 2, Wo = W / 2;
    if (Ho == 0 || Wo == 0) {
      throw std::invalid_argument("maxpool2d: input " + xv.shape_str() + " smaller than window");
    }
    Tensor<S> r({B, C, Ho, Wo});
    Node n = make_node(Op::maxpool2d, {x}, Tensor<S>{});
    n.argmax.resize(static_cast<size_t>(r.numel()));
    int64_t oi = 0;
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const int64_t plane = (int64_t(b) * C + c) * H * W;
        for (int y = 0; y < Ho; ++y) {
          for (int xx = 0; xx < Wo; ++xx, ++oi) {
            S best = xv[plane + int64_t(2 * y) * W + 2 * xx];
            int64_t best_idx = plane + int64_t(2 * y) * W + 2 * xx;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const int64_t idx = plane + int64_t(2 * y + dy) * W + (2 * xx + dx);
                if (xv[idx] > best) {
                  best = xv[idx];
                  best_idx = idx;
                }
              }
            }
            r[oi] = best;
            n.argmax[static_cast<size_t>(oi)] = best_idx;
          }
        }
      }
    }
    n.value = std::move(r);
    return push(std::move(n));
  }

  /// (B, ...) -> (B, prod(...))
  NodeId flatten(NodeId x) {
    const Tensor<S>& xv = value(x);
    if (xv.ndim() < 2) {
      throw std::invalid_argument("flatten: expected >= 2-D input, got " + xv.shape_str());
    }
    int rest = 1;
    for (int i = 1; i < xv.ndim(); ++i) rest *= xv.dim(i);
    Tensor<S> r({xv.dim(0), rest}, xv.data);
    return push(make_node(Op::flatten, {x}, std::move(r)));
  }

  /// Row-wise softmax, (B,C) -> (B,C)
  NodeId softmax(NodeId z) {
    Tensor<S> p = detail::softmax_rows(value(z));
    ensure_finite(p, "softmax");
    return push(make_node(Op::softmax, {z}, std::move(p)));
  }

  /// Mean cross-entropy over the batch; labels are constants. Scalar output.
  NodeId ce_mean(NodeId logits, std::vector<int> labels) {
    const Tensor<S>& zv = value(logits);
    const S v = detail::ce_value(zv, labels);
    Node n = make_node(Op::ce_mean, {logits}, Tensor<S>({1}, {v}));
    n.labels = std::move(labels);
    n.saved = detail::softmax_rows(zv);
    ensure_finite(n.value, "ce_mean");
    return push(std::move(n));
  }

  /// Mean over all elements of (p - q)^2. Scalar output.
  NodeId msd(NodeId p, NodeId q) {
    const Tensor<S>& pv = value(p);
    const Tensor<S>& qv = value(q);
    detail::require_same_shape(pv, qv, "msd");
    S acc = S(0);
    for (int64_t i = 0; i < pv.numel(); ++i) {
      const S d = pv[i] - qv[i];
      acc += d * d;
    }
    acc /= static_cast<S>(pv.numel());
    Tensor<S> r({1}, {acc});
    ensure_finite(r, "msd");
    return push(make_node(Op::msd, {p, q}, std::move(r)));
  }

  /// Sum of all elements. Scalar output.
  NodeId sum_all(NodeId a) {
    Tensor<S> r({1}, {sum(value(a))});
    ensure_finite(r, "sum");
    return push(make_node(Op::sum_all, {a}, std::move(r)));
  }

  /// Linear combination of scalar nodes: sum_i coeff_i * node_i.
  NodeId combine(const std::vector<std::pair<S, NodeId>>& terms) {
    if (terms.empty()) throw std::invalid_argument("combine: no terms");
    Node n;
    n.op = Op::combine;
    S acc = S(0);
    for (const auto& [c, id] : terms) {
      const Tensor<S>& tv = value(id);
      if (tv.numel() != 1) {
        throw std::invalid_argument("combine: operand is not scalar, shape " + tv.shape_str());
      }
      acc += c * tv[0];
      n.inputs.push_back(id);
      n.coeffs.push_back(c);
    }
    n.value = Tensor<S>({1}, {acc});
    ensure_finite(n.value, "combine");
    return push(std::move(n));
  }

  const Tensor<S>& value(NodeId id) const { return node(id).value; }

  int size() const { return static_cast<int>(nodes_.size()); }

  /// Reverse pass from `root`, seeded with `seed` (shape must match the root
  /// value; for a scalar loss that is a 1-element tensor). Populates gradients
  /// for leaves selected by `req`; everything else is pruned. A tape can run
  /// backward once.
  void backward(NodeId root, const Tensor<S>& seed, const GradRequest& req) {
    if (consumed_) throw std::runtime_error("backward: tape already consumed");
    consumed_ = true;
    if (!req.wrt_params && !req.wrt_input) {
      throw std::invalid_argument("backward: gradient request selects nothing");
    }
    const Node& r = node(root);
    if (!seed.same_shape(r.value)) {
      throw std::invalid_argument("backward: seed shape " + seed.shape_str() +
                                  " does not match root " + r.value.shape_str());
    }

    // Reachability of requested leaves decides which nodes carry gradients.
    need_.assign(nodes_.size(), 0);
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::leaf) {
        need_[i] = (n.leaf_kind == LeafKind::param && req.wrt_params) ||
                   (n.leaf_kind == LeafKind::input && req.wrt_input);
      } else {
        for (NodeId in : n.inputs) {
          if (need_[static_cast<size_t>(in)]) {
            need_[i] = 1;
            break;
          }
        }
      }
    }

    grads_.assign(nodes_.size(), Tensor<S>{});
    if (!need_[static_cast<size_t>(root)]) return;  // no requested leaf feeds the root
    grads_[static_cast<size_t>(root)] = seed;

    for (NodeId id = root; id >= 0; --id) {
      const Node& n = node(id);
      if (!need_[static_cast<size_t>(id)] || grads_[static_cast<size_t>(id)].numel() == 0) continue;
      backward_one(id, n);
    }
  }

  bool has_grad(NodeId id) const {
    return !need_.empty() && need_[checked(id)] && grads_[checked(id)].numel() != 0;
  }

  /// Gradient of a node after backward(); zero tensor if the node was
  /// requested but the root does not depend on it.
  Tensor<S> grad(NodeId id) const {
    if (need_.empty()) throw std::runtime_error("grad: backward has not run");
    if (!need_[checked(id)]) throw std::runtime_error("grad: gradient was not requested for node");
    if (grads_[checked(id)].numel() == 0) return Tensor<S>(node(id).value.shape);
    return grads_[checked(id)];
  }

 private:
  enum class Op : uint8_t {
    leaf,
    matmul,
    add_rowvec,
    relu,
    conv2d,
    maxpool2d,
    flatten,
    softmax,
    ce_mean,
    msd,
    sum_all,
    combine,
  };

  struct Node {
    Op op = Op::leaf;
    LeafKind leaf_kind = LeafKind::constant;
    std::vector<NodeId> inputs;
    Tensor<S> value;
    std::vector<int> labels;      // ce_mean
    Tensor<S> saved;              // ce_mean: softmax of the logits
    std::vector<int64_t> argmax;  // maxpool2d: winning input offsets
    std::vector<S> coeffs;        // combine
  };

  static Node make_node(Op op, std::initializer_list<NodeId> inputs, Tensor<S> value) {
    Node n;
    n.op = op;
    n.inputs.assign(inputs);
    n.value = std::move(value);
    return n;
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  size_t checked(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
      throw std::out_of_range("tape: invalid node id " + std::to_string(id));
    }
    return static_cast<size_t>(id);
  }

  const Node& node(NodeId id) const { return nodes_[checked(id)]; }

  Tensor<S>& grad_buf(NodeId id) {
    Tensor<S>& g = grads_[static_cast<size_t>(id)];
    if (g.numel() == 0) g = Tensor<S>(node(id).value.shape);
    return g;
  }

  bool wants(NodeId id) const { return need_[static_cast<size_t>(id)] != 0; }

  void backward_one(NodeId id, const Node& n) {
    const Tensor<S>& g = grads_[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::leaf:
        return;
      case Op::matmul: {
        const NodeId a = n.inputs[0], w = n.inputs[1];
        const Tensor<S>& av = value(a);
        const Tensor<S>& wv = value(w);
        const int b = av.dim(0), in = av.dim(1), out = wv.dim(1);
        if (wants(a)) {
          Tensor<S>& da = grad_buf(a);
          for (int row = 0; row < b; ++row) {
            const S* grow = &g[int64_t(row) * out];
            for (int i = 0; i < in; ++i) {
              const S* wrow = &wv[int64_t(i) * out];
              S acc = S(0);
              for (int o = 0; o < out; ++o) acc += grow[o] * wrow[o];
              da[int64_t(row) * in + i] += acc;
            }
          }
        }
        if (wants(w)) {
          Tensor<S>& dw = grad_buf(w);
          for (int row = 0; row < b; ++row) {
            const S* arow = &av[int64_t(row) * in];
            const S* grow = &g[int64_t(row) * out];
            for (int i = 0; i < in; ++i) {
              const S s = arow[i];
              S* dwrow = &dw[int64_t(i) * out];
              for (int o = 0; o < out; ++o) dwrow[o] += s * grow[o];
            }
          }
        }
        return;
      }
      case Op::add_rowvec: {
        const NodeId a = n.inputs[0], v = n.inputs[1];
        const int b = n.value.dim(0), out = n.value.dim(1);
        if (wants(a)) {
          Tensor<S>& da = grad_buf(a);
          for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
        }
        if (wants(v)) {
          Tensor<S>& dv = grad_buf(v);
          for (int row = 0; row < b; ++row) {
            for (int o = 0; o < out; ++o) dv[o] += g[int64_t(row) * out + o];
          }
        }
        return;
      }
      case Op::relu: {
        const NodeId a = n.inputs[0];
        if (!wants(a)) return;
        const Tensor<S>& av = value(a);
        Tensor<S>& da = grad_buf(a);
        for (int64_t i = 0; i < av.numel(); ++i) {
          if (av[i] > S(0)) da[i] += g[i];
        }
        return;
      }
      case Op::conv2d:
        backward_conv(n, g);
        return;
      case Op::maxpool2d: {
        const NodeId x = n.inputs[0];
        if (!wants(x)) return;
        Tensor<S>& dx = grad_buf(x);
        for (int64_t oi = 0; oi < g.numel(); ++oi) dx[n.argmax[static_cast<size_t>(oi)]] += g[oi];
        return;
      }
      case Op::flatten: {
        const NodeId x = n.inputs[0];
        if (!wants(x)) return;
        Tensor<S>& dx = grad_buf(x);
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
        return;
      }
      case Op::softmax: {
        const NodeId z = n.inputs[0];
        if (!wants(z)) return;
        const Tensor<S>& p = n.value;
        const int b = p.dim(0), c = p.dim(1);
        Tensor<S>& dz = grad_buf(z);
        for (int row = 0; row < b; ++row) {
          const S* prow = &p[int64_t(row) * c];
          const S* grow = &g[int64_t(row) * c];
          S dot = S(0);
          for (int i = 0; i < c; ++i) dot += grow[i] * prow[i];
          for (int i = 0; i < c; ++i) dz[int64_t(row) * c + i] += prow[i] * (grow[i] - dot);
        }
        return;
      }
      case Op::ce_mean: {
        const NodeId z = n.inputs[0];
        if (!wants(z)) return;
        const Tensor<S>& p = n.saved;
        const int b = p.dim(0), c = p.dim(1);
        const S s = g[0] / static_cast<S>(b);
        Tensor<S>& dz = grad_buf(z);
        for (int row = 0; row < b; ++row) {
          const int y = n.labels[static_cast<size_t>(row)];
          for (int i = 0; i < c; ++i) {
            dz[int64_t(row) * c + i] += s * (p[int64_t(row) * c + i] - (i == y ? S(1) : S(0)));
          }
        }
        return;
      }
      case Op::msd: {
        const NodeId p = n.inputs[0], q = n.inputs[1];
        const Tensor<S>& pv = value(p);
        const Tensor<S>& qv = value(q);
        const S s = g[0] * S(2) / static_cast<S>(pv.numel());
        if (wants(p)) {
          Tensor<S>& dp = grad_buf(p);
          for (int64_t i = 0; i < pv.numel(); ++i) dp[i] += s * (pv[i] - qv[i]);
        }
        if (wants(q)) {
          Tensor<S>& dq = grad_buf(q);
          for (int64_t i = 0; i < pv.numel(); ++i) dq[i] -= s * (pv[i] - qv[i]);
        }
        return;
      }
      case Op::sum_all: {
        const NodeId a = n.inputs[0];
        if (!wants(a)) return;
        Tensor<S>& da = grad_buf(a);
        for (int64_t i = 0; i < da.numel(); ++i) da[i] += g[0];
        return;
      }
      case Op::combine: {
        for (size_t t = 0; t < n.inputs.size(); ++t) {
          const NodeId in = n.inputs[t];
          if (!wants(in)) continue;
          grad_buf(in)[0] += n.coeffs[t] * g[0];
        }
        return;
      }
    }
  }

  void backward_conv(const Node& n, const Tensor<S>& g) {
    const NodeId x = n.inputs[0], w = n.inputs[1], bias = n.inputs[2];
    const Tensor<S>& xv = value(x);
    const Tensor<S>& wv = value(w);
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3), O = wv.dim(0);
    if (wants(x)) {
      Tensor<S>& dx = grad_buf(x);
      for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < O; ++oc) {
          const S* gplane = &g[((int64_t(b) * O + oc) * H) * W];
          for (int ic = 0; ic < C; ++ic) {
            S* dplane = &dx[((int64_t(b) * C + ic) * H) * W];
            for (int ky = 0; ky < 3; ++ky) {
              const int ylo = std::max(0, 1 - ky), yhi = std::min(H, H + 1 - ky);
              for (int kx = 0; kx < 3; ++kx) {
                const S kw = wv[((int64_t(oc) * C + ic) * 3 + ky) * 3 + kx];
                const int xlo = std::max(0, 1 - kx), xhi = std::min(W, W + 1 - kx);
                for (int y = ylo; y < yhi; ++y) {
                  S* drow = dplane + int64_t(y + ky - 1) * W + (kx - 1);
                  const S* grow = gplane + int64_t(y) * W;
                  for (int xx = xlo; xx < xhi; ++xx) drow[xx] += kw * grow[xx];
                }
              }
            }
          }
        }
      }
    }
    if (wants(w)) {
      Tensor<S>& dw = grad_buf(w);
      for (int oc = 0; oc < O; ++oc) {
        for (int ic = 0; ic < C; ++ic) {
          for (int ky = 0; ky < 3; ++ky) {
            const int ylo = std::max(0, 1 - ky), yhi = std::min(H, H + 1 - ky);
            for (int kx = 0; kx < 3; ++kx) {
              const int xlo = std::max(0, 1 - kx), xhi = std::min(W, W + 1 - kx);
              S acc = S(0);
              for (int b = 0; b < B; ++b) {
                const S* gplane = &g[((int64_t(b) * O + oc) * H) * W];
                const S* iplane = &xv[((int64_t(b) * C + ic) * H) * W];
                for (int y = ylo; y < yhi; ++y) {
                  const S* irow = iplane + int64_t(y + ky - 1) * W + (kx - 1);
                  const S* grow = gplane + int64_t(y) * W;
                  for (int xx = xlo; xx < xhi; ++xx) acc += irow[xx] * grow[xx];
                }
              }
              dw[((int64_t(oc) * C + ic) * 3 + ky) * 3 + kx] += acc;
            }
          }
        }
      }
    }
    if (wants(bias)) {
      Tensor<S>& db = grad_buf(bias);
      for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < O; ++oc) {
          const S* gplane = &g[((int64_t(b) * O + oc) * H) * W];
          S acc = S(0);
          for (int64_t i = 0; i < int64_t(H) * W; ++i) acc += gplane[i];
          db[oc] += acc;
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
  std::vector<uint8_t> need_;
  bool consumed_ = false;
};

}  // namespace fastat
