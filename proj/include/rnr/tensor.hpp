#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "rnr/common.hpp"

namespace rnr {

template <typename T>
class Tape;

// ---------------------------------------------------------------------------
// Tensor: dense row-major array with value semantics. Copies alias the same
// storage (clone() deep-copies). A tensor joins a Tape lazily the first time
// an operation consumes it while that tape is recording.
// ---------------------------------------------------------------------------
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(rnr::numel(shape_), fill)),
        gi_(std::make_shared<GradInfo>()) {}

  static Tensor from(Shape shape, std::vector<T> values) {
    if (rnr::numel(shape) != values.size())
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    t.gi_ = std::make_shared<GradInfo>();
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<T>>& storage() const { return data_; }

  T item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape_));
    return (*data_)[0];
  }

  Tensor& set_requires_grad(bool v) {
    gi_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return gi_ && gi_->requires_grad; }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    t.gi_ = std::make_shared<GradInfo>();
    t.gi_->requires_grad = gi_->requires_grad;
    return t;
  }

  // Tape linkage. Op outputs are bound directly (they live and die with one
  // tape on one thread); long-lived tensors such as parameters are instead
  // registered in a tape-local leaf table keyed by this identity, so several
  // threads can tape the same parameter concurrently without writes to the
  // shared control block.
  struct GradInfo {
    bool requires_grad = false;
    std::uint64_t tape_id = 0;  // 0 = not on any tape
    int node = -1;
  };

  int node_on(const Tape<T>& tape) const;
  void bind(std::uint64_t tape_id, int node) const {
    gi_->tape_id = tape_id;
    gi_->node = node;
  }
  const void* grad_identity() const { return gi_.get(); }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<GradInfo> gi_;
};

// ---------------------------------------------------------------------------
// Tape: per-forward-pass record of operations in topological order. Nodes
// hold the closure implementing the backward rule; saved activations live in
// the closure captures. Single-threaded by contract; the active tape is a
// thread-local set by TapeScope.
// ---------------------------------------------------------------------------
template <typename T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    std::size_t out_size;
    std::function<void(Tape&)> backward;  // empty for leaves
  };

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

  int add_node(const char* op, std::vector<int> inputs, std::size_t out_size,
               std::function<void(Tape&)> fn) {
    nodes_.push_back(Node{op, std::move(inputs), out_size, std::move(fn)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Node id of t on this tape: the direct binding for op outputs, the leaf
  // table for everything else; -1 when absent.
  int binding_of(const Tensor<T>& t) const {
    const int n = t.node_on(*this);
    if (n >= 0) return n;
    auto it = leaf_table_.find(t.grad_identity());
    return it == leaf_table_.end() ? -1 : it->second;
  }

  // Registers t as a leaf (no backward rule). The binding lives in this
  // tape's leaf table, never in the tensor itself.
  int leaf_id(const Tensor<T>& t) {
    int n = binding_of(t);
    if (n >= 0) return n;
    n = add_node("leaf", {}, t.size(), nullptr);
    leaf_table_.emplace(t.grad_identity(), n);
    return n;
  }

  // Gradient buffer of a node, zero-initialized on first touch.
  std::vector<T>& grad(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].out_size, T(0));
    return g;
  }

  // Gradient of a tensor after backward(). Unused parameters get zeros.
  std::vector<T> grad_of(const Tensor<T>& t) const {
    int n = binding_of(t);
    if (n < 0 || grads_[static_cast<std::size_t>(n)].empty())
      return std::vector<T>(t.size(), T(0));
    return grads_[static_cast<std::size_t>(n)];
  }

  // Reverse accumulation from a scalar loss. Each node is visited exactly
  // once, in reverse topological order (the recording order is topological
  // by construction).
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    const int ln = binding_of(loss);
    if (ln < 0) throw ContractError("backward(): loss is not on this tape");
    grad(ln).assign(1, T(1));
    for (int i = ln; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && !grads_[static_cast<std::size_t>(i)].empty()) n.backward(*this);
    }
  }

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> c{1};
    return c.fetch_add(1);
  }
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
int Tensor<T>::node_on(const Tape<T>& tape) const {
  return (gi_ && gi_->tape_id == tape.id()) ? gi_->node : -1;
}

// RAII guard making a tape the active recorder on this thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& t) : prev_(Tape<T>::current()) { Tape<T>::current() = &t; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// ---------------------------------------------------------------------------
// Recording helper shared by all ops.
// ---------------------------------------------------------------------------
namespace detail {

template <typename T>
struct OpRec {
  Tape<T>* tape = nullptr;
  std::vector<int> ids;  // -1 for inputs that do not track gradients

  explicit OpRec(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tp = Tape<T>::current();
    if (!tp) return;
    bool any = false;
    for (const Tensor<T>* t : inputs)
      if (t->requires_grad() || t->node_on(*tp) >= 0) any = true;
    if (!any) return;
    tape = tp;
    for (const Tensor<T>* t : inputs)
      ids.push_back((t->requires_grad() || t->node_on(*tp) >= 0) ? tp->leaf_id(*t) : -1);
  }

  bool active() const { return tape != nullptr; }

  // Node id the upcoming record() call will assign; valid to capture in the
  // backward closure because all leaf nodes were created in the constructor.
  int out_id() const { return static_cast<int>(tape->size()); }

  void record(const char* op, const Tensor<T>& out, std::function<void(Tape<T>&)> fn) const {
    int n = tape->add_node(op, ids, out.size(), std::move(fn));
    out.bind(tape->id(), n);
  }
};

template <typename T>
inline void axpy(std::vector<T>& dst, const T* src, T a, std::size_t n) {
  T* d = dst.data();
  for (std::size_t i = 0; i < n; ++i) d[i] += a * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives. Each op computes the forward
// value and, when recording, pushes a node whose closure implements the
// backward rule.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(),
                "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  detail::OpRec<T> rec{&a, &b};
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (rec.active()) {
    const int ia = rec.ids[0], ib = rec.ids[1];
    rec.record("add", out, [ia, ib, n, on = rec.out_id()](Tape<T>& tp) {
      const auto& g = tp.grad(on);
      if (ia >= 0) detail::axpy(tp.grad(ia), g.data(), T(1), n);
      if (ib >= 0) detail::axpy(tp.grad(ib), g.data(), T(1), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(),
                "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  detail::OpRec<T> rec{&a, &b};
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rec.active()) {
    const int ia = rec.ids[0], ib = rec.ids[1];
    rec.record("sub", out, [ia, ib, n, on = rec.out_id()](Tape<T>& tp) {
      const auto& g = tp.grad(on);
      if (ia >= 0) detail::axpy(tp.grad(ia), g.data(), T(1), n);
      if (ib >= 0) detail::axpy(tp.grad(ib), g.data(), T(-1), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape() == b.shape(),
                "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  detail::OpRec<T> rec{&a, &b};
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rec.active()) {
    const int ia = rec.ids[0], ib = rec.ids[1];
    rec.record("mul", out,
               [ia, ib, n, sa = a.storage(), sb = b.storage(), on = rec.out_id()](Tape<T>& tp) {
                 const auto& g = tp.grad(on);
                 if (ia >= 0) {
                   auto& ga = tp.grad(ia);
                   for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*sb)[i];
                 }
                 if (ib >= 0) {
                   auto& gb = tp.grad(ib);
                   for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * (*sa)[i];
                 }
               });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  detail::OpRec<T> rec{&a};
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("scale", out, [ia, c, n, on = rec.out_id()](Tape<T>& tp) {
      const auto& g = tp.grad(on);
      if (ia >= 0) detail::axpy(tp.grad(ia), g.data(), c, n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  detail::OpRec<T> rec{&a};
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("relu", out, [ia, n, sa = a.storage(), on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const auto& g = tp.grad(on);
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        if ((*sa)[i] > T(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  detail::OpRec<T> rec{&a};
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a.data()[i];
    out.data()[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
  }
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("sigmoid", out, [ia, n, so = out.storage(), on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const auto& g = tp.grad(on);
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        const T y = (*so)[i];
        ga[i] += g[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  detail::OpRec<T> rec{&a};
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(a.data()[i]);
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("tanh", out, [ia, n, so = out.storage(), on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const auto& g = tp.grad(on);
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        const T y = (*so)[i];
        ga[i] += g[i] * (T(1) - y * y);
      }
    });
  }
  return out;
}

// x: [m,n], b: [n]; adds b to every row.
template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& x, const Tensor<T>& b) {
  require_shape(x.rank() == 2 && b.rank() == 1 && x.extent(1) == b.extent(0),
                "add_row_vector: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  detail::OpRec<T> rec{&x, &b};
  const int m = x.extent(0), n = x.extent(1);
  Tensor<T> out(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + b.data()[j];
  if (rec.active()) {
    const int ix = rec.ids[0], ib = rec.ids[1];
    rec.record("add_row_vector", out, [ix, ib, m, n, on = rec.out_id()](Tape<T>& tp) {
      const auto& g = tp.grad(on);
      if (ix >= 0) detail::axpy(tp.grad(ix), g.data(), T(1), static_cast<std::size_t>(m) * n);
      if (ib >= 0) {
        auto& gb = tp.grad(ib);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.rank() == 2 && b.rank() == 2 && a.extent(1) == b.extent(0),
                "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  detail::OpRec<T> rec{&a, &b};
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> out({m, n});
  {
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int i = 0; i < m; ++i) {
      T* orow = po + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const T av = pa[static_cast<std::size_t>(i) * k + kk];
        const T* brow = pb + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (rec.active()) {
    const int ia = rec.ids[0], ib = rec.ids[1];
    rec.record("matmul", out,
               [ia, ib, m, k, n, sa = a.storage(), sb = b.storage(), on = rec.out_id()](Tape<T>& tp) {
                 const auto& g = tp.grad(on);
                 if (ia >= 0) {
                   // dA = dC * B^T
                   auto& ga = tp.grad(ia);
                   const T* pb = sb->data();
                   for (int i = 0; i < m; ++i)
                     for (int kk = 0; kk < k; ++kk) {
                       T acc = T(0);
                       const T* grow = g.data() + static_cast<std::size_t>(i) * n;
                       const T* brow = pb + static_cast<std::size_t>(kk) * n;
                       for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                       ga[static_cast<std::size_t>(i) * k + kk] += acc;
                     }
                 }
                 if (ib >= 0) {
                   // dB = A^T * dC
                   auto& gb = tp.grad(ib);
                   const T* pa = sa->data();
                   for (int kk = 0; kk < k; ++kk)
                     for (int i = 0; i < m; ++i) {
                       const T av = pa[static_cast<std::size_t>(i) * k + kk];
                       const T* grow = g.data() + static_cast<std::size_t>(i) * n;
                       T* gbrow = gb.data() + static_cast<std::size_t>(kk) * n;
                       for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                     }
                 }
               });
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  require_shape(a.rank() == 2, "transpose2d: rank-2 tensor required, got " + shape_str(a.shape()));
  detail::OpRec<T> rec{&a};
  const int m = a.extent(0), n = a.extent(1);
  Tensor<T> out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("transpose", out, [ia, m, n, on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const auto& g = tp.grad(on);
      auto& ga = tp.grad(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require_shape(rnr::numel(shape) == a.size(),
                "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  detail::OpRec<T> rec{&a};
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
  if (rec.active()) {
    const int ia = rec.ids[0];
    const std::size_t n = a.size();
    rec.record("reshape", out, [ia, n, on = rec.out_id()](Tape<T>& tp) {
      if (ia >= 0) detail::axpy(tp.grad(ia), tp.grad(on).data(), T(1), n);
    });
  }
  return out;
}

// Concatenation along an arbitrary axis; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  require_shape(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: bad axis");
  Shape out_shape = s0;
  int total = 0;
  for (const auto& p : parts) {
    require_shape(p.rank() == static_cast<int>(s0.size()), "concat: rank mismatch");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis)
        require_shape(p.extent(d) == s0[static_cast<std::size_t>(d)], "concat: extent mismatch at axis " + std::to_string(d));
    total += p.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);
  for (int d = axis + 1; d < static_cast<int>(s0.size()); ++d) inner *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);

  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  detail::OpRec<T> rec{};
  {
    // OpRec's initializer-list ctor cannot take a dynamic list; redo inline.
    Tape<T>* tp = Tape<T>::current();
    bool any = false;
    if (tp)
      for (auto* t : ptrs)
        if (t->requires_grad() || t->node_on(*tp) >= 0) any = true;
    if (tp && any) {
      rec.tape = tp;
      for (auto* t : ptrs)
        rec.ids.push_back((t->requires_grad() || t->node_on(*tp) >= 0) ? tp->leaf_id(*t) : -1);
    }
  }

  Tensor<T> out(out_shape);
  const std::size_t out_axis_inner = static_cast<std::size_t>(total) * inner;
  std::size_t offset = 0;  // in units of inner elements along axis
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (offset, len) per part, in elements along axis*inner
  for (const auto& p : parts) {
    const std::size_t len = static_cast<std::size_t>(p.extent(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * len, len, out.data() + o * out_axis_inner + offset);
    spans.emplace_back(offset, len);
    offset += len;
  }
  if (rec.active()) {
    auto ids = rec.ids;
    rec.record("concat", out, [ids, spans, outer, out_axis_inner, on = rec.out_id()](Tape<T>& tp) {
      const auto& g = tp.grad(on);
      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        if (ids[pi] < 0) continue;
        auto& gp = tp.grad(ids[pi]);
        const auto [off, len] = spans[pi];
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.data() + o * out_axis_inner + off;
          T* dst = gp.data() + o * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
  require_shape(axis >= 0 && axis < a.rank(), "slice: bad axis");
  require_shape(start >= 0 && len >= 1 && start + len <= a.extent(axis),
                "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                    ") out of bounds for axis extent " + std::to_string(a.extent(axis)));
  detail::OpRec<T> rec{&a};
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.extent(d));
  for (int d = axis + 1; d < a.rank(); ++d) inner *= static_cast<std::size_t>(a.extent(d));
  const std::size_t in_axis_inner = static_cast<std::size_t>(a.extent(axis)) * inner;
  const std::size_t out_len = static_cast<std::size_t>(len) * inner;
  const std::size_t off = static_cast<std::size_t>(start) * inner;

  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data() + o * in_axis_inner + off, out_len, out.data() + o * out_len);
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("slice", out, [ia, outer, in_axis_inner, out_len, off, on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const auto& g = tp.grad(on);
      auto& ga = tp.grad(ia);
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = g.data() + o * out_len;
        T* dst = ga.data() + o * in_axis_inner + off;
        for (std::size_t i = 0; i < out_len; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  detail::OpRec<T> rec{&a};
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  Tensor<T> out = Tensor<T>::from({1}, {acc});
  if (rec.active()) {
    const int ia = rec.ids[0];
    const std::size_t n = a.size();
    rec.record("sum", out, [ia, n, on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const T g = tp.grad(on)[0];
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  detail::OpRec<T> rec{&a};
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  const T inv = T(1) / static_cast<T>(a.size());
  Tensor<T> out = Tensor<T>::from({1}, {acc * inv});
  if (rec.active()) {
    const int ia = rec.ids[0];
    const std::size_t n = a.size();
    rec.record("mean", out, [ia, n, inv, on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const T g = tp.grad(on)[0] * inv;
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

// Column means of a [m,n] matrix -> [n].
template <typename T>
Tensor<T> mean_axis0(const Tensor<T>& a) {
  require_shape(a.rank() == 2, "mean_axis0: rank-2 tensor required");
  detail::OpRec<T> rec{&a};
  const int m = a.extent(0), n = a.extent(1);
  Tensor<T> out({n});
  const T inv = T(1) / static_cast<T>(m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j] += a.data()[static_cast<std::size_t>(i) * n + j];
  for (int j = 0; j < n; ++j) out.data()[j] *= inv;
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("mean_axis0", out, [ia, m, n, inv, on = rec.out_id()](Tape<T>& tp) {
      if (ia < 0) return;
      const auto& g = tp.grad(on);
      auto& ga = tp.grad(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j)] * inv;
    });
  }
  return out;
}

// Softmax along an axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  require_shape(axis >= 0 && axis < a.rank(), "softmax: bad axis");
  detail::OpRec<T> rec{&a};
  std::size_t outer = 1, inner = 1;
  const int L = a.extent(axis);
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.extent(d));
  for (int d = axis + 1; d < a.rank(); ++d) inner *= static_cast<std::size_t>(a.extent(d));

  Tensor<T> out(a.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * static_cast<std::size_t>(L) * inner + in;
      T mx = a.data()[base];
      for (int l = 1; l < L; ++l) mx = std::max(mx, a.data()[base + static_cast<std::size_t>(l) * inner]);
      T denom = T(0);
      for (int l = 0; l < L; ++l) {
        const T e = std::exp(a.data()[base + static_cast<std::size_t>(l) * inner] - mx);
        out.data()[base + static_cast<std::size_t>(l) * inner] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int l = 0; l < L; ++l) out.data()[base + static_cast<std::size_t>(l) * inner] *= inv;
    }
  if (rec.active()) {
    const int ia = rec.ids[0];
    rec.record("softmax", out,
               [ia, outer, inner, L, so = out.storage(), on = rec.out_id()](Tape<T>& tp) {
                 if (ia < 0) return;
                 const auto& g = tp.grad(on);
                 auto& ga = tp.grad(ia);
                 for (std::size_t o = 0; o < outer; ++o)
                   for (std::size_t in = 0; in < inner; ++in) {
                     const std::size_t base = o * static_cast<std::size_t>(L) * inner + in;
                     T dot = T(0);
                     for (int l = 0; l < L; ++l) {
                       const std::size_t idx = base + static_cast<std::size_t>(l) * inner;
                       dot += g[idx] * (*so)[idx];
                     }
                     for (int l = 0; l < L; ++l) {
                       const std::size_t idx = base + static_cast<std::size_t>(l) * inner;
                       ga[idx] += (*so)[idx] * (g[idx] - dot);
                     }
                   }
               });
  }
  return out;
}

// Per-row layer normalization of [m,n] with affine parameters gamma/beta [n].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  require_shape(x.rank() == 2 && gamma.rank() == 1 && beta.rank() == 1 &&
                    gamma.extent(0) == x.extent(1) && beta.extent(0) == x.extent(1),
                "layer_norm: shapes " + shape_str(x.shape()) + ", " + shape_str(gamma.shape()));
  detail::OpRec<T> rec{&x, &gamma, &beta};
  const int m = x.extent(0), n = x.extent(1);
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m) * n);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + static_cast<std::size_t>(i) * n;
    T mu = T(0);
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = inv;
    for (int j = 0; j < n; ++j) {
      const T xh = (row[j] - mu) * inv;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      out.data()[static_cast<std::size_t>(i) * n + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  if (rec.active()) {
    const int ix = rec.ids[0], ig = rec.ids[1], ibt = rec.ids[2];
    rec.record("layer_norm", out,
               [ix, ig, ibt, m, n, xhat, inv_std, sg = gamma.storage(), on = rec.out_id()](Tape<T>& tp) {
                 const auto& g = tp.grad(on);
                 if (ig >= 0) {
                   auto& gg = tp.grad(ig);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j)
                       gg[static_cast<std::size_t>(j)] +=
                           g[static_cast<std::size_t>(i) * n + j] * (*xhat)[static_cast<std::size_t>(i) * n + j];
                 }
                 if (ibt >= 0) {
                   auto& gb = tp.grad(ibt);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * n + j];
                 }
                 if (ix >= 0) {
                   auto& gx = tp.grad(ix);
                   for (int i = 0; i < m; ++i) {
                     const std::size_t base = static_cast<std::size_t>(i) * n;
                     T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                     for (int j = 0; j < n; ++j) {
                       const T dxh = g[base + j] * (*sg)[static_cast<std::size_t>(j)];
                       mean_dxhat += dxh;
                       mean_dxhat_xhat += dxh * (*xhat)[base + j];
                     }
                     mean_dxhat /= static_cast<T>(n);
                     mean_dxhat_xhat /= static_cast<T>(n);
                     const T inv = (*inv_std)[static_cast<std::size_t>(i)];
                     for (int j = 0; j < n; ++j) {
                       const T dxh = g[base + j] * (*sg)[static_cast<std::size_t>(j)];
                       gx[base + j] += inv * (dxh - mean_dxhat - (*xhat)[base + j] * mean_dxhat_xhat);
                     }
                   }
                 }
               });
  }
  return out;
}

// Embedding lookup: table [V,E], ids of length L -> [L,E].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  require_shape(table.rank() == 2, "embedding: table must be [V,E]");
  const int V = table.extent(0), E = table.extent(1);
  for (int id : ids)
    if (id < 0 || id >= V) throw ContractError("embedding: id " + std::to_string(id) + " out of range");
  detail::OpRec<T> rec{&table};
  const int L = static_cast<int>(ids.size());
  Tensor<T> out({L, E});
  for (int t = 0; t < L; ++t)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(t)]) * E, E,
                out.data() + static_cast<std::size_t>(t) * E);
  if (rec.active()) {
    const int it = rec.ids[0];
    rec.record("embedding", out, [it, ids, E, L, on = rec.out_id()](Tape<T>& tp) {
      if (it < 0) return;
      const auto& g = tp.grad(on);
      auto& gt = tp.grad(it);
      for (int t = 0; t < L; ++t) {
        T* dst = gt.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(t)]) * E;
        const T* src = g.data() + static_cast<std::size_t>(t) * E;
        for (int j = 0; j < E; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Per-channel spatial mean of [C,H,W] -> [C].
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  require_shape(x.rank() == 3, "spatial_mean: [C,H,W] required");
  detail::OpRec<T> rec{&x};
  const int C = x.extent(0);
  const std::size_t hw = static_cast<std::size_t>(x.extent(1)) * x.extent(2);
  Tensor<T> out({C});
  const T inv = T(1) / static_cast<T>(hw);
  for (int c = 0; c < C; ++c) {
    T acc = T(0);
    const T* p = x.data() + static_cast<std::size_t>(c) * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    out.data()[c] = acc * inv;
  }
  if (rec.active()) {
    const int ix = rec.ids[0];
    rec.record("spatial_mean", out, [ix, C, hw, inv, on = rec.out_id()](Tape<T>& tp) {
      if (ix < 0) return;
      const auto& g = tp.grad(on);
      auto& gx = tp.grad(ix);
      for (int c = 0; c < C; ++c) {
        const T gv = g[static_cast<std::size_t>(c)] * inv;
        T* dst = gx.data() + static_cast<std::size_t>(c) * hw;
        for (std::size_t i = 0; i < hw; ++i) dst[i] += gv;
      }
    });
  }
  return out;
}

// Broadcast a channel vector [C] to [C,H,W].
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& v, int H, int W) {
  require_shape(v.rank() == 1, "broadcast_spatial: [C] required");
  detail::OpRec<T> rec{&v};
  const int C = v.extent(0);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor<T> out({C, H, W});
  for (int c = 0; c < C; ++c)
    std::fill_n(out.data() + static_cast<std::size_t>(c) * hw, hw, v.data()[c]);
  if (rec.active()) {
    const int iv = rec.ids[0];
    rec.record("broadcast_spatial", out, [iv, C, hw, on = rec.out_id()](Tape<T>& tp) {
      if (iv < 0) return;
      const auto& g = tp.grad(on);
      auto& gv = tp.grad(iv);
      for (int c = 0; c < C; ++c) {
        T acc = T(0);
        const T* src = g.data() + static_cast<std::size_t>(c) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += src[i];
        gv[static_cast<std::size_t>(c)] += acc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of [C_in,H,W] with [C_out,C_in,k,k], zero "same"
// padding (spatial size preserved at stride 1), odd kernels only. Direct
// triple loop; desk-scale sizes keep this fast enough.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride = 1,
                 int dilation = 1) {
  require_shape(x.rank() == 3 && w.rank() == 4, "conv2d: x [C,H,W], w [Cout,Cin,k,k] required");
  require_shape(w.extent(1) == x.extent(0), "conv2d: channel mismatch, x has " +
                                                std::to_string(x.extent(0)) + " channels, w expects " +
                                                std::to_string(w.extent(1)));
  require_shape(w.extent(2) == w.extent(3) && w.extent(2) % 2 == 1, "conv2d: kernel extents must be odd");
  require_shape(bias.rank() == 1 && bias.extent(0) == w.extent(0), "conv2d: bias shape mismatch");
  if (stride < 1 || dilation < 1) throw ContractError("conv2d: stride and dilation must be >= 1");

  detail::OpRec<T> rec{&x, &w, &bias};
  const int Cin = x.extent(0), H = x.extent(1), W = x.extent(2);
  const int Cout = w.extent(0), K = w.extent(2);
  const int pad = dilation * (K - 1) / 2;
  const int Ho = (H - 1) / stride + 1;
  const int Wo = (W - 1) / stride + 1;

  Tensor<T> out({Cout, Ho, Wo});
  const std::size_t in_hw = static_cast<std::size_t>(H) * W;
  const std::size_t out_hw = static_cast<std::size_t>(Ho) * Wo;

  // Valid output column range for a given kernel x-offset
  // (0 <= ox*stride + off <= W-1). Captures by value: the backward closure
  // outlives this frame.
  auto col_range = [W, Wo, stride](int off, int& o0, int& o1) {
    o0 = off < 0 ? (-off + stride - 1) / stride : 0;
    o1 = (W - 1 - off) / stride;
    if (o1 > Wo - 1) o1 = Wo - 1;
  };

  {
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (int co = 0; co < Cout; ++co)
      std::fill_n(po + static_cast<std::size_t>(co) * out_hw, out_hw, bias.data()[co]);
    for (int co = 0; co < Cout; ++co)
      for (int ci = 0; ci < Cin; ++ci)
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const T wv = pw[((static_cast<std::size_t>(co) * Cin + ci) * K + ky) * K + kx];
            if (wv == T(0)) continue;
            const int yoff = ky * dilation - pad;
            const int xoff = kx * dilation - pad;
            int o0 = 0, o1 = -1;
            col_range(xoff, o0, o1);
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride + yoff;
              if (iy < 0 || iy >= H) continue;
              const T* xrow = px + static_cast<std::size_t>(ci) * in_hw + static_cast<std::size_t>(iy) * W + xoff;
              T* orow = po + static_cast<std::size_t>(co) * out_hw + static_cast<std::size_t>(oy) * Wo;
              if (stride == 1) {
                for (int ox = o0; ox <= o1; ++ox) orow[ox] += wv * xrow[ox];
              } else {
                for (int ox = o0; ox <= o1; ++ox) orow[ox] += wv * xrow[static_cast<std::size_t>(ox) * stride];
              }
            }
          }
  }

  if (rec.active()) {
    const int ix = rec.ids[0], iw = rec.ids[1], ib = rec.ids[2];
    rec.record("conv2d", out,
               [=, sx = x.storage(), sw = w.storage(), on = rec.out_id()](Tape<T>& tp) {
                 const auto& g = tp.grad(on);
                 if (ib >= 0) {
                   auto& gb = tp.grad(ib);
                   for (int co = 0; co < Cout; ++co) {
                     T acc = T(0);
                     const T* src = g.data() + static_cast<std::size_t>(co) * out_hw;
                     for (std::size_t i = 0; i < out_hw; ++i) acc += src[i];
                     gb[static_cast<std::size_t>(co)] += acc;
                   }
                 }
                 if (ix >= 0) {
                   auto& gx = tp.grad(ix);
                   const T* pw = sw->data();
                   for (int co = 0; co < Cout; ++co)
                     for (int ci = 0; ci < Cin; ++ci)
                       for (int ky = 0; ky < K; ++ky)
                         for (int kx = 0; kx < K; ++kx) {
                           const T wv = pw[((static_cast<std::size_t>(co) * Cin + ci) * K + ky) * K + kx];
                           if (wv == T(0)) continue;
                           const int yoff = ky * dilation - pad;
                           const int xoff = kx * dilation - pad;
                           int o0 = 0, o1 = -1;
                           col_range(xoff, o0, o1);
                           for (int oy = 0; oy < Ho; ++oy) {
                             const int iy = oy * stride + yoff;
                             if (iy < 0 || iy >= H) continue;
                             T* xg = gx.data() + static_cast<std::size_t>(ci) * in_hw +
                                     static_cast<std::size_t>(iy) * W + xoff;
                             const T* grow = g.data() + static_cast<std::size_t>(co) * out_hw +
                                             static_cast<std::size_t>(oy) * Wo;
                             if (stride == 1) {
                               for (int ox = o0; ox <= o1; ++ox) xg[ox] += wv * grow[ox];
                             } else {
                               for (int ox = o0; ox <= o1; ++ox)
                                 xg[static_cast<std::size_t>(ox) * stride] += wv * grow[ox];
                             }
                           }
                         }
                 }
                 if (iw >= 0) {
                   auto& gw = tp.grad(iw);
                   const T* px = sx->data();
                   for (int co = 0; co < Cout; ++co)
                     for (int ci = 0; ci < Cin; ++ci)
                       for (int ky = 0; ky < K; ++ky)
                         for (int kx = 0; kx < K; ++kx) {
                           const int yoff = ky * dilation - pad;
                           const int xoff = kx * dilation - pad;
                           int o0 = 0, o1 = -1;
                           col_range(xoff, o0, o1);
                           T acc = T(0);
                           for (int oy = 0; oy < Ho; ++oy) {
                             const int iy = oy * stride + yoff;
                             if (iy < 0 || iy >= H) continue;
                             const T* xrow = px + static_cast<std::size_t>(ci) * in_hw +
                                             static_cast<std::size_t>(iy) * W + xoff;
                             const T* grow = g.data() + static_cast<std::size_t>(co) * out_hw +
                                             static_cast<std::size_t>(oy) * Wo;
                             if (stride == 1) {
                               for (int ox = o0; ox <= o1; ++ox) acc += grow[ox] * xrow[ox];
                             } else {
                               for (int ox = o0; ox <= o1; ++ox)
                                 acc += grow[ox] * xrow[static_cast<std::size_t>(ox) * stride];
                             }
                           }
                           gw[((static_cast<std::size_t>(co) * Cin + ci) * K + ky) * K + kx] += acc;
                         }
                 }
               });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear_resize: align-corners-false interpolation of [C,H,W]. The nested
// lerp form preserves constant inputs exactly.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int Ho, int Wo) {
  require_shape(x.rank() == 3, "bilinear_resize: [C,H,W] required");
  if (Ho < 1 || Wo < 1) throw ContractError("bilinear_resize: target extents must be >= 1");
  detail::OpRec<T> rec{&x};
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);

  struct Tap {
    int i0, i1;
    T w1;  // weight of i1; weight of i0 is 1-w1
  };
  auto make_taps = [](int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double r = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * r - 0.5;
      if (src < 0) src = 0;
      if (src > in - 1) src = in - 1;
      int i0 = static_cast<int>(std::floor(src));
      if (i0 > in - 2) i0 = in - 2;
      if (i0 < 0) i0 = 0;
      const int i1 = std::min(i0 + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = Tap{i0, i1, static_cast<T>(src - i0)};
    }
    return taps;
  };
  auto ytaps = std::make_shared<std::vector<Tap>>(make_taps(H, Ho));
  auto xtaps = std::make_shared<std::vector<Tap>>(make_taps(W, Wo));

  Tensor<T> out({C, Ho, Wo});
  const std::size_t in_hw = static_cast<std::size_t>(H) * W;
  const std::size_t out_hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const T* pc = x.data() + static_cast<std::size_t>(c) * in_hw;
    T* po = out.data() + static_cast<std::size_t>(c) * out_hw;
    for (int oy = 0; oy < Ho; ++oy) {
      const Tap ty = (*ytaps)[static_cast<std::size_t>(oy)];
      const T* r0 = pc + static_cast<std::size_t>(ty.i0) * W;
      const T* r1 = pc + static_cast<std::size_t>(ty.i1) * W;
      for (int ox = 0; ox < Wo; ++ox) {
        const Tap tx = (*xtaps)[static_cast<std::size_t>(ox)];
        const T v0 = r0[tx.i0] + tx.w1 * (r0[tx.i1] - r0[tx.i0]);
        const T v1 = r1[tx.i0] + tx.w1 * (r1[tx.i1] - r1[tx.i0]);
        po[static_cast<std::size_t>(oy) * Wo + ox] = v0 + ty.w1 * (v1 - v0);
      }
    }
  }
  if (rec.active()) {
    const int ixid = rec.ids[0];
    rec.record("bilinear_resize", out,
               [ixid, C, H, W, Ho, Wo, in_hw, out_hw, ytaps, xtaps, on = rec.out_id()](Tape<T>& tp) {
                 if (ixid < 0) return;
                 const auto& g = tp.grad(on);
                 auto& gx = tp.grad(ixid);
                 for (int c = 0; c < C; ++c) {
                   T* gc = gx.data() + static_cast<std::size_t>(c) * in_hw;
                   const T* go = g.data() + static_cast<std::size_t>(c) * out_hw;
                   for (int oy = 0; oy < Ho; ++oy) {
                     const Tap ty = (*ytaps)[static_cast<std::size_t>(oy)];
                     for (int ox = 0; ox < Wo; ++ox) {
                       const Tap tx = (*xtaps)[static_cast<std::size_t>(ox)];
                       const T gv = go[static_cast<std::size_t>(oy) * Wo + ox];
                       const T wy1 = ty.w1, wy0 = T(1) - ty.w1;
                       const T wx1 = tx.w1, wx0 = T(1) - tx.w1;
                       gc[static_cast<std::size_t>(ty.i0) * W + tx.i0] += gv * wy0 * wx0;
                       gc[static_cast<std::size_t>(ty.i0) * W + tx.i1] += gv * wy0 * wx1;
                       gc[static_cast<std::size_t>(ty.i1) * W + tx.i0] += gv * wy1 * wx0;
                       gc[static_cast<std::size_t>(ty.i1) * W + tx.i1] += gv * wy1 * wx1;
                     }
                   }
                 }
               });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bce_with_logits: mean of g*-log(sigmoid(z)) + (1-g)*-log(1-sigmoid(z)) in
// the stable max(z,0) - z*g + log(1+exp(-|z|)) form. Targets must be 0/1.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& z, const Tensor<T>& g) {
  require_shape(z.shape() == g.shape(),
                "bce_with_logits: shape mismatch " + shape_str(z.shape()) + " vs " + shape_str(g.shape()));
  detail::OpRec<T> rec{&z, &g};
  const std::size_t n = z.size();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T zi = z.data()[i], gi = g.data()[i];
    acc += std::max(zi, T(0)) - zi * gi + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor<T> out = Tensor<T>::from({1}, {acc / static_cast<T>(n)});
  if (rec.active()) {
    const int iz = rec.ids[0];
    rec.record("bce_with_logits", out,
               [iz, n, sz = z.storage(), sg = g.storage(), on = rec.out_id()](Tape<T>& tp) {
                 if (iz < 0) return;
                 const T up = tp.grad(on)[0] / static_cast<T>(n);
                 auto& gz = tp.grad(iz);
                 for (std::size_t i = 0; i < n; ++i) {
                   const T zi = (*sz)[i];
                   const T s = zi >= T(0) ? T(1) / (T(1) + std::exp(-zi))
                                          : std::exp(zi) / (T(1) + std::exp(zi));
                   gz[i] += up * (s - (*sg)[i]);
                 }
               });
  }
  return out;
}

// Convenience: backward through the thread-local current tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tp = Tape<T>::current();
  if (!tp) throw ContractError("backward(): no active tape");
  tp->backward(loss);
}

}  // namespace rnr
