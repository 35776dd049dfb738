#pragma once

// Reverse-mode differentiation over the kernels in ops.hpp.
//
// A Graph records every node created through it. Node ids are assigned in
// creation order and parents always exist before their children, so the id
// order is a topological order and backward() simply walks ids downwards.
// One Graph serves one forward/backward pass; it is not thread-safe.

#include <agmb/ops.hpp>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace agmb {

class Graph;

enum class OpKind {
  Constant,
  Parameter,
  Matmul,
  Transpose,
  Softmax,
  Conv,
  AvgPool,
  Relu,
  Sigmoid,
  Add,
  Mul,
  Scale,
  ChannelBias,
  Concat,
  GlobalAvgPool,
  Sum,
  Gather,
  Reshape,
};

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Parameter gradients in registration order.
class Gradients {
 public:
  void push(std::string name, Tensor g) { items_.push_back({std::move(name), std::move(g)}); }
  const std::vector<NamedTensor>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }

  const Tensor& at(const std::string& name) const {
    for (const auto& it : items_)
      if (it.name == name) return it.value;
    throw UsageError("no gradient recorded for parameter '" + name + "'");
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const Gradients&>(*this).at(name));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& it : items_) n += it.value.size();
    return n;
  }

 private:
  std::vector<NamedTensor> items_;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  struct Node {
    Tensor value;
    OpKind kind;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool needs_grad = false;
    std::optional<Tensor> grad;
    std::string name;  // parameters only
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push(Node{std::move(t), OpKind::Constant, {}, {}, false, {}, {}}); }

  Var parameter(Tensor t, std::string name) {
    if (param_index_.count(name)) throw UsageError("parameter '" + name + "' registered twice");
    Var v = push(Node{std::move(t), OpKind::Parameter, {}, {}, true, {}, name});
    param_index_.emplace(std::move(name), v.id);
    params_.push_back(v.id);
    return v;
  }

  /// Records an op node. `backward` receives the node's output gradient and
  /// must call accumulate() on each parent that needs a gradient.
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_.at(p).needs_grad;
    if (!value.all_finite()) throw NumericError("non-finite value produced by op");
    return push(Node{std::move(value), kind, std::move(parents), needs ? std::move(backward) : BackwardFn{},
                     needs, {}, {}});
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Node& node(Var v) const {
    check(v);
    return nodes_[v.id];
  }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  void accumulate(std::size_t id, const Tensor& g) {
    auto& n = nodes_.at(id);
    if (!n.needs_grad) return;
    if (!n.grad) {
      n.grad = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) (*n.grad)[i] += g[i];
    }
  }

  // In-place variant used by kernels that scatter into a parent gradient.
  Tensor& grad_buffer(std::size_t id) {
    auto& n = nodes_.at(id);
    if (!n.grad) n.grad = Tensor(n.value.shape());
    return *n.grad;
  }

  /// Back-propagates from a scalar root. Returns d(root)/d(p) for every
  /// registered parameter, zero-filled when p does not influence the root.
  Gradients backward(Var root) {
    check(root);
    if (nodes_[root.id].value.size() != 1) {
      throw UsageError("backward requires a scalar root, got " +
                       shape_str(nodes_[root.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape(), 1.0);
    for (std::size_t id = root.id + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.grad || !n.backward) continue;
      const Tensor g = *n.grad;
      n.backward(*this, g);
    }
    Gradients out;
    for (auto id : params_) {
      const auto& n = nodes_[id];
      out.push(n.name, n.grad ? *n.grad : Tensor(n.value.shape()));
    }
    return out;
  }

  /// Gradient of the last backward() root with respect to any node.
  Tensor grad(Var v) const {
    const auto& n = node(v);
    return n.grad ? *n.grad : Tensor(n.value.shape());
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }
  void check(Var v) const {
    if (v.graph != this || v.id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> params_;
  std::unordered_map<std::string, std::size_t> param_index_;
};

namespace ad {

namespace detail {
inline Graph& same_graph(Var a, Var b) {
  if (!a.graph || a.graph != b.graph) throw UsageError("variables belong to different graphs");
  return *a.graph;
}
}  // namespace detail

inline const Tensor& value(Var v) { return v.graph->value(v); }

inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Tensor out = ops::matmul(g.value(a), g.value(b));
  return g.record(OpKind::Matmul, std::move(out), {a.id, b.id}, [a, b](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(a);
    const Tensor& bv = gr.value(b);
    if (gr.needs_grad(a.id)) {
      Tensor ga(av.shape());
      const Tensor bt = ops::transpose(bv);
      ops::detail::gemm_acc(go.data().data(), bt.data().data(), ga.data().data(), go.dim(0),
                            go.dim(1), bt.dim(1));
      gr.accumulate(a.id, ga);
    }
    if (gr.needs_grad(b.id)) {
      Tensor gb(bv.shape());
      const Tensor at = ops::transpose(av);
      ops::detail::gemm_acc(at.data().data(), go.data().data(), gb.data().data(), at.dim(0),
                            at.dim(1), go.dim(1));
      gr.accumulate(b.id, gb);
    }
  });
}

inline Var transpose(Var a) {
  Graph& g = *a.graph;
  return g.record(OpKind::Transpose, ops::transpose(g.value(a)), {a.id},
                  [a](Graph& gr, const Tensor& go) { gr.accumulate(a.id, ops::transpose(go)); });
}

inline Var softmax(Var x, std::size_t axis) {
  Graph& g = *x.graph;
  Tensor out = ops::softmax(g.value(x), axis);
  const std::size_t self = g.size();
  return g.record(OpKind::Softmax, std::move(out), {x.id}, [x, axis, self](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(Var{&gr, self});
    const auto sp = ops::split_axis(y.shape(), axis);
    Tensor gx(y.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (std::size_t a = 0; a < sp.extent; ++a) dot += go[base + a * sp.inner] * y[base + a * sp.inner];
        for (std::size_t a = 0; a < sp.extent; ++a) {
          const std::size_t idx = base + a * sp.inner;
          gx[idx] = y[idx] * (go[idx] - dot);
        }
      }
    gr.accumulate(x.id, gx);
  });
}

inline Var grouped_conv2d(Var x, Var w, std::size_t groups, std::size_t stride = 1) {
  Graph& g = detail::same_graph(x, w);
  Tensor out = ops::grouped_conv2d(g.value(x), g.value(w), groups, stride);
  return g.record(OpKind::Conv, std::move(out), {x.id, w.id}, [x, w, groups, stride](Graph& gr, const Tensor& go) {
    const bool nx = gr.needs_grad(x.id), nw = gr.needs_grad(w.id);
    ops::detail::conv_backward(gr.value(x), gr.value(w), go, groups, stride,
                               nx ? &gr.grad_buffer(x.id) : nullptr, nw ? &gr.grad_buffer(w.id) : nullptr);
  });
}

inline Var avg_pool2d(Var x, std::size_t window, std::size_t stride) {
  Graph& g = *x.graph;
  return g.record(OpKind::AvgPool, ops::avg_pool2d(g.value(x), window, stride), {x.id},
                  [x, window, stride](Graph& gr, const Tensor& go) {
                    Tensor& gx = gr.grad_buffer(x.id);
                    const double inv = 1.0 / static_cast<double>(window * window);
                    for (std::size_t c = 0; c < go.dim(0); ++c)
                      for (std::size_t oy = 0; oy < go.dim(1); ++oy)
                        for (std::size_t ox = 0; ox < go.dim(2); ++ox) {
                          const double v = go.at(c, oy, ox) * inv;
                          for (std::size_t dy = 0; dy < window; ++dy)
                            for (std::size_t dx = 0; dx < window; ++dx)
                              gx.at(c, oy * stride + dy, ox * stride + dx) += v;
                        }
                  });
}

inline Var relu(Var x) {
  Graph& g = *x.graph;
  return g.record(OpKind::Relu, ops::relu(g.value(x)), {x.id}, [x](Graph& gr, const Tensor& go) {
    const Tensor& xv = gr.value(x);
    Tensor gx(xv.shape());
    // Subgradient 0 at the kink.
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > 0.0 ? go[i] : 0.0;
    gr.accumulate(x.id, gx);
  });
}

inline Var sigmoid(Var x) {
  Graph& g = *x.graph;
  const std::size_t self = g.size();
  return g.record(OpKind::Sigmoid, ops::sigmoid(g.value(x)), {x.id}, [x, self](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(Var{&gr, self});
    Tensor gx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] = go[i] * y[i] * (1.0 - y[i]);
    gr.accumulate(x.id, gx);
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  return g.record(OpKind::Add, ops::add(g.value(a), g.value(b)), {a.id, b.id},
                  [a, b](Graph& gr, const Tensor& go) {
                    gr.accumulate(a.id, go);
                    gr.accumulate(b.id, go);
                  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  return g.record(OpKind::Mul, ops::mul(g.value(a), g.value(b)), {a.id, b.id},
                  [a, b](Graph& gr, const Tensor& go) {
                    if (gr.needs_grad(a.id)) gr.accumulate(a.id, ops::mul(go, gr.value(b)));
                    if (gr.needs_grad(b.id)) gr.accumulate(b.id, ops::mul(go, gr.value(a)));
                  });
}

inline Var scale(Var a, double s) {
  Graph& g = *a.graph;
  return g.record(OpKind::Scale, ops::scale(g.value(a), s), {a.id},
                  [a, s](Graph& gr, const Tensor& go) { gr.accumulate(a.id, ops::scale(go, s)); });
}

inline Var add_channel_bias(Var x, Var bias) {
  Graph& g = detail::same_graph(x, bias);
  return g.record(OpKind::ChannelBias, ops::add_channel_bias(g.value(x), g.value(bias)), {x.id, bias.id},
                  [x, bias](Graph& gr, const Tensor& go) {
                    gr.accumulate(x.id, go);
                    if (gr.needs_grad(bias.id)) {
                      const std::size_t plane = go.dim(1) * go.dim(2);
                      Tensor gb(gr.value(bias).shape());
                      for (std::size_t c = 0; c < go.dim(0); ++c)
                        for (std::size_t i = 0; i < plane; ++i) gb[c] += go[c * plane + i];
                      gr.accumulate(bias.id, gb);
                    }
                  });
}

/// Concatenates the flat data of `parts` in order and views it as `shape`.
inline Var concat_flat(const std::vector<Var>& parts, Shape shape) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Graph& g = *parts.front().graph;
  std::vector<double> d;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p);
    const auto& v = g.value(p).values();
    d.insert(d.end(), v.begin(), v.end());
    ids.push_back(p.id);
  }
  Tensor out(std::move(shape), std::move(d));
  return g.record(OpKind::Concat, std::move(out), ids, [parts](Graph& gr, const Tensor& go) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const auto& s = gr.value(p).shape();
      const std::size_t n = shape_numel(s);
      if (gr.needs_grad(p.id)) {
        Tensor gp(s);
        std::copy_n(go.data().begin() + static_cast<std::ptrdiff_t>(off), n, gp.data().begin());
        gr.accumulate(p.id, gp);
      }
      off += n;
    }
  });
}

inline Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& s0 = parts.front().graph->value(parts.front()).shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.graph->value(p).shape();
    if (s.size() != 3 || s0.size() != 3 || s[1] != s0[1] || s[2] != s0[2]) {
      throw DimensionError("concat_channels: spatial mismatch " + shape_str(s0) + " vs " + shape_str(s));
    }
    channels += s[0];
  }
  return concat_flat(parts, Shape{channels, s0[1], s0[2]});
}

inline Var global_avg_pool(Var x) {
  Graph& g = *x.graph;
  return g.record(OpKind::GlobalAvgPool, ops::global_avg_pool(g.value(x)), {x.id}, [x](Graph& gr, const Tensor& go) {
    const Tensor& xv = gr.value(x);
    const std::size_t plane = xv.dim(1) * xv.dim(2);
    Tensor gx(xv.shape());
    for (std::size_t c = 0; c < xv.dim(0); ++c)
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] = go[c] / static_cast<double>(plane);
    gr.accumulate(x.id, gx);
  });
}

inline Var sum(Var x) {
  Graph& g = *x.graph;
  return g.record(OpKind::Sum, Tensor::scalar(ops::sum(g.value(x))), {x.id}, [x](Graph& gr, const Tensor& go) {
    gr.accumulate(x.id, Tensor(gr.value(x).shape(), go[0]));
  });
}

/// out.flat[i] = x.flat[index[i]], viewed as `shape`.
inline Var gather(Var x, std::vector<std::size_t> index, Shape shape) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  if (index.size() != shape_numel(shape)) throw DimensionError("gather: index count does not match shape");
  std::vector<double> d(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw DimensionError("gather: index out of range");
    d[i] = xv[index[i]];
  }
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return g.record(OpKind::Gather, Tensor(std::move(shape), std::move(d)), {x.id}, [x, idx](Graph& gr, const Tensor& go) {
    Tensor& gx = gr.grad_buffer(x.id);
    for (std::size_t i = 0; i < idx->size(); ++i) gx[(*idx)[i]] += go[i];
  });
}

inline Var reshape(Var x, Shape shape) {
  Graph& g = *x.graph;
  Tensor out = g.value(x).reshaped(std::move(shape));
  return g.record(OpKind::Reshape, std::move(out), {x.id}, [x](Graph& gr, const Tensor& go) {
    gr.accumulate(x.id, go.reshaped(gr.value(x).shape()));
  });
}

/// Rows [start, start+count) of a 2-D tensor.
inline Var rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.graph->value(x);
  if (xv.rank() != 2 || start + count > xv.dim(0) || count == 0) {
    throw DimensionError("rows: range out of bounds for " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(1);
  std::vector<std::size_t> idx(count * n);
  std::iota(idx.begin(), idx.end(), start * n);
  return gather(x, std::move(idx), Shape{count, n});
}

/// Selects whole channels of a C x H x W map in the given order.
inline Var select_channels(Var x, const std::vector<std::size_t>& channels) {
  const Tensor& xv = x.graph->value(x);
  if (xv.rank() != 3 || channels.empty()) throw DimensionError("select_channels: expected C x H x W input");
  const std::size_t plane = xv.dim(1) * xv.dim(2);
  std::vector<std::size_t> idx;
  idx.reserve(channels.size() * plane);
  for (auto c : channels) {
    if (c >= xv.dim(0)) throw DimensionError("select_channels: channel out of range");
    for (std::size_t i = 0; i < plane; ++i) idx.push_back(c * plane + i);
  }
  return gather(x, std::move(idx), Shape{channels.size(), xv.dim(1), xv.dim(2)});
}

/// 1x1 convolution (weights Cout x Cin) plus per-channel bias.
inline Var conv1x1(Var x, Var w, Var bias) {
  const Tensor& wv = w.graph->value(w);
  if (wv.rank() != 2) throw DimensionError("conv1x1: weights must be Cout x Cin");
  Var w4 = reshape(w, Shape{wv.dim(0), wv.dim(1), 1, 1});
  return add_channel_bias(grouped_conv2d(x, w4, 1, 1), bias);
}

}  // namespace ad
}  // namespace agmb
