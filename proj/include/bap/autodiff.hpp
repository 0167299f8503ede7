#pragma once

// Reverse-mode differentiation over small dense 2-D tensors.
//
// A Graph owns every node created during one forward pass. Nodes are appended
// in creation order, which is already a topological order, so backward() is a
// single reverse sweep. Scalars are 1x1 tensors. Reductions accumulate left to
// right so results are bit-reproducible for identical inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bap/matrix.hpp"

namespace bap::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  std::size_t rows() const { return node().rows; }
  std::size_t cols() const { return node().cols; }
  std::size_t size() const { return node().value.size(); }
  bool requires_grad() const { return node().requires_grad; }

  const std::vector<T>& values() const { return node().value; }
  T at(std::size_t r, std::size_t c) const { return node().value[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on a non-scalar tensor");
    return node().value[0];
  }

  /// Gradient after Graph::backward(); zero-filled for leaves the loss does not reach.
  const std::vector<T>& grad() const { return node().grad; }

  BasicMatrix<T> to_matrix() const { return BasicMatrix<T>(rows(), cols(), values()); }

  Graph<T>* graph() const { return graph_; }
  std::size_t id() const { return id_; }

 private:
  const auto& node() const { return graph_->nodes_[id_]; }
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    // Reads this node's grad and accumulates into its inputs' grads.
    std::function<void(Graph&)> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<T> leaf(BasicMatrix<T> value, bool requires_grad = true) {
    Node n;
    n.rows = value.rows;
    n.cols = value.cols;
    n.value = std::move(value.values);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, nodes_.size() - 1);
  }

  Tensor<T> constant(BasicMatrix<T> value) { return leaf(std::move(value), false); }

  /// Populates grad of every requires_grad node with d(loss)/d(node).
  void backward(Tensor<T> loss) {
    if (backward_done_) throw GraphError("backward() called twice on the same graph; call reset()");
    if (loss.graph() != this) throw GraphError("loss tensor belongs to a different graph");
    if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss");
    backward_done_ = true;
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.value.size(), T(0));
    }
    auto& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this);
    }
  }

  /// Drops every node; handles into this graph become invalid.
  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Op plumbing.
  Tensor<T> emit(std::size_t rows, std::size_t cols, std::vector<T> value,
                 std::initializer_list<Tensor<T>> inputs, std::function<void(Graph&)> backward) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    for (const auto& in : inputs) {
      if (in.graph() != this) throw GraphError("tensor belongs to a different graph");
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, nodes_.size() - 1);
  }

  Tensor<T> emit(std::size_t rows, std::size_t cols, std::vector<T> value,
                 std::span<const Tensor<T>> inputs, std::function<void(Graph&)> backward) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    for (const auto& in : inputs) {
      if (in.graph() != this) throw GraphError("tensor belongs to a different graph");
      n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, nodes_.size() - 1);
  }

  std::vector<T>& grad_of(std::size_t id) { return nodes_[id].grad; }
  const std::vector<T>& value_of(std::size_t id) const { return nodes_[id].value; }
  bool tracks(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  friend class Tensor<T>;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ (" + detail::shape_str(m, k) + " * " +
                     detail::shape_str(b.rows(), n) + ")");
  }
  std::vector<T> out(m * n, T(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = bv.data() + p * n;
      T* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  Tensor<T> result;
  result = g->emit(m, n, std::move(out), {a, b}, [ia, ib, m, k, n, self = g->node_count()](Graph<T>& gr) {
    const auto& dc = gr.grad_of(self);
    if (gr.tracks(ia)) {
      auto& da = gr.grad_of(ia);
      const auto& bv = gr.value_of(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc = T(0);
          for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * bv[p * n + j];
          da[i * k + p] += acc;
        }
    }
    if (gr.tracks(ib)) {
      auto& db = gr.grad_of(ib);
      const auto& av = gr.value_of(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * dc[i * n + j];
        }
    }
  });
  return result;
}

template <typename T>
Tensor<T> transpose(Tensor<T> a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  const auto& av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id();
  return g->emit(c, r, std::move(out), {a}, [ia, r, c, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    auto& da = gr.grad_of(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += dy[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g->emit(a.rows(), a.cols(), std::move(out), {a, b}, [ia, ib, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    for (std::size_t id : {ia, ib}) {
      if (!gr.tracks(id)) continue;
      auto& d = gr.grad_of(id);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
    }
  });
}

/// a[m x n] + row[1 x n] added to every row.
template <typename T>
Tensor<T> add_row(Tensor<T> a, Tensor<T> row) {
  const std::size_t m = a.rows(), n = a.cols();
  if (row.rows() != 1 || row.cols() != n) {
    throw ShapeError("add_row: expected 1x" + std::to_string(n) + " row, got " +
                     detail::shape_str(row.rows(), row.cols()));
  }
  std::vector<T> out(a.values());
  const auto& rv = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id(), ir = row.id();
  return g->emit(m, n, std::move(out), {a, row}, [ia, ir, m, n, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    if (gr.tracks(ia)) {
      auto& da = gr.grad_of(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (gr.tracks(ir)) {
      auto& dr = gr.grad_of(ir);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dr[j] += dy[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g->emit(a.rows(), a.cols(), std::move(out), {a, b}, [ia, ib, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    if (gr.tracks(ia)) {
      auto& da = gr.grad_of(ia);
      const auto& bv = gr.value_of(ib);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (gr.tracks(ib)) {
      auto& db = gr.grad_of(ib);
      const auto& av = gr.value_of(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(Tensor<T> a, T factor) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= factor;
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id();
  return g->emit(a.rows(), a.cols(), std::move(out), {a}, [ia, factor, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    auto& da = gr.grad_of(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(Tensor<T> a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> out(a.values());
  for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id();
  return g->emit(a.rows(), a.cols(), std::move(out), {a}, [ia, inv_sqrt2, self = g->node_count()](Graph<T>& gr) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const auto& dy = gr.grad_of(self);
    const auto& x = gr.value_of(ia);
    auto& da = gr.grad_of(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
      da[i] += dy[i] * (cdf + x[i] * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> slice_rows(Tensor<T> a, std::size_t begin, std::size_t count) {
  const std::size_t n = a.cols();
  if (count == 0 || begin + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const auto& av = a.values();
  std::vector<T> out(av.begin() + static_cast<std::ptrdiff_t>(begin * n),
                     av.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id();
  return g->emit(count, n, std::move(out), {a}, [ia, begin, n, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    auto& da = gr.grad_of(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) da[begin * n + i] += dy[i];
  });
}

template <typename T>
Tensor<T> slice_cols(Tensor<T> a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || begin + count > n) throw ShapeError("slice_cols: range out of bounds");
  const auto& av = a.values();
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * n + begin + j];
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id();
  return g->emit(m, count, std::move(out), {a}, [ia, begin, count, m, n, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    auto& da = gr.grad_of(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) da[i * n + begin + j] += dy[i * count + j];
  });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    ids.push_back(p.id());
  }
  Graph<T>* g = parts[0].graph();
  return g->emit(m, n, std::move(out), parts, [ids, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t len = gr.value_of(id).size();
      if (gr.tracks(id)) {
        auto& d = gr.grad_of(id);
        for (std::size_t i = 0; i < len; ++i) d[i] += dy[offset + i];
      }
      offset += len;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    n += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  std::vector<T> out(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const auto& pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + col + j] = pv[i * w + j];
    col += w;
  }
  Graph<T>* g = parts[0].graph();
  return g->emit(m, n, std::move(out), parts, [ids, widths, m, n, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    std::size_t col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (gr.tracks(ids[k])) {
        auto& d = gr.grad_of(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) d[i * w + j] += dy[i * n + col + j];
      }
      col += w;
    }
  });
}

template <typename T>
Tensor<T> concat_rows(std::initializer_list<Tensor<T>> parts) {
  return concat_rows(std::span<const Tensor<T>>(parts.begin(), parts.size()));
}

template <typename T>
Tensor<T> concat_cols(std::initializer_list<Tensor<T>> parts) {
  return concat_cols(std::span<const Tensor<T>>(parts.begin(), parts.size()));
}

// ---------------------------------------------------------------------------
// Reductions, normalization, losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tensor<T> a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  Graph<T>* g = a.graph();
  const std::size_t ia = a.id();
  return g->emit(1, 1, std::vector<T>{acc}, {a}, [ia, self = g->node_count()](Graph<T>& gr) {
    const T dy = gr.grad_of(self)[0];
    for (auto& d : gr.grad_of(ia)) d += dy;
  });
}

/// Row mask for softmax_rows: nonzero = position participates.
using Mask = std::vector<std::uint8_t>;

/// r x r lower-triangular mask (query i sees keys 0..i).
inline Mask causal_mask(std::size_t r) {
  Mask m(r * r, 0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * r + j] = 1;
  return m;
}

/// Row-wise softmax with max subtraction. Masked entries are exactly 0.
template <typename T>
Tensor<T> softmax_rows(Tensor<T> x, const Mask* mask = nullptr) {
  const std::size_t r = x.rows(), c = x.cols();
  if (mask && mask->size() != r * c) throw ShapeError("softmax_rows: mask shape mismatch");
  const auto& xv = x.values();
  std::vector<T> out(r * c, T(0));
  for (std::size_t i = 0; i < r; ++i) {
    bool any = false;
    T mx = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (mask && !(*mask)[i * c + j]) continue;
      if (!any || xv[i * c + j] > mx) mx = xv[i * c + j];
      any = true;
    }
    if (!any) throw ShapeError("softmax_rows: row " + std::to_string(i) + " is fully masked");
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (mask && !(*mask)[i * c + j]) continue;
      const T e = std::exp(xv[i * c + j] - mx);
      out[i * c + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
  }
  Graph<T>* g = x.graph();
  const std::size_t ix = x.id();
  // Masked outputs are 0, so their terms vanish from the Jacobian-vector product.
  return g->emit(r, c, std::move(out), {x}, [ix, r, c, self = g->node_count()](Graph<T>& gr) {
    const auto& dy = gr.grad_of(self);
    const auto& y = gr.value_of(self);
    auto& dx = gr.grad_of(ix);
    for (std::size_t i = 0; i < r; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * dy[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization to zero mean / unit variance, then gain * x + bias.
template <typename T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias) {
  const std::size_t r = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<T> out(r * d);
  std::vector<T> xhat(r * d);
  std::vector<T> inv_std(r);
  const T eps = static_cast<T>(kLayerNormEps);
  for (std::size_t i = 0; i < r; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xv[i * d + j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T dev = xv[i * d + j] - mean;
      var += dev * dev;
    }
    var /= static_cast<T>(d);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xv[i * d + j] - mean) * inv_std[i];
      out[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];
    }
  }
  Graph<T>* g = x.graph();
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return g->emit(r, d, std::move(out), {x, gain, bias},
                 [ix, ig, ib, r, d, xhat = std::move(xhat), inv_std = std::move(inv_std),
                  self = g->node_count()](Graph<T>& gr) {
                   const auto& dy = gr.grad_of(self);
                   if (gr.tracks(ig)) {
                     auto& dg = gr.grad_of(ig);
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < d; ++j) dg[j] += dy[i * d + j] * xhat[i * d + j];
                   }
                   if (gr.tracks(ib)) {
                     auto& db = gr.grad_of(ib);
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
                   }
                   if (gr.tracks(ix)) {
                     const auto& gv = gr.value_of(ig);
                     auto& dx = gr.grad_of(ix);
                     const T inv_d = T(1) / static_cast<T>(d);
                     for (std::size_t i = 0; i < r; ++i) {
                       T mean_dxh = T(0), mean_dxh_xh = T(0);
                       for (std::size_t j = 0; j < d; ++j) {
                         const T dxh = dy[i * d + j] * gv[j];
                         mean_dxh += dxh;
                         mean_dxh_xh += dxh * xhat[i * d + j];
                       }
                       mean_dxh *= inv_d;
                       mean_dxh_xh *= inv_d;
                       for (std::size_t j = 0; j < d; ++j) {
                         const T dxh = dy[i * d + j] * gv[j];
                         dx[i * d + j] += inv_std[i] * (dxh - mean_dxh - xhat[i * d + j] * mean_dxh_xh);
                       }
                     }
                   }
                 });
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Binary cross-entropy on a 1x1 logit: log(1 + exp(-x)) for y = 1, log(1 + exp(x)) for y = 0.
template <typename T>
Tensor<T> bce_with_logits(Tensor<T> logit, int label) {
  if (logit.size() != 1) throw ShapeError("bce_with_logits: logit must be 1x1");
  if (label != 0 && label != 1) throw std::invalid_argument("bce_with_logits: label must be 0 or 1");
  const T x = logit.item();
  const T y = static_cast<T>(label);
  const T loss = std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
  Graph<T>* g = logit.graph();
  const std::size_t il = logit.id();
  return g->emit(1, 1, std::vector<T>{loss}, {logit}, [il, x, y, self = g->node_count()](Graph<T>& gr) {
    gr.grad_of(il)[0] += gr.grad_of(self)[0] * (sigmoid(x) - y);
  });
}

}  // namespace bap::ad
