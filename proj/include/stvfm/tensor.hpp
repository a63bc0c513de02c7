#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "stvfm/error.hpp"
#include "stvfm/kernels.hpp"

// Dense row-major tensors with tape-based reverse-mode differentiation.
// A Tensor is immutable after construction and either lives on a Tape (as a
// leaf or an op result) or is a free constant. Ops are free functions; each
// registers an adjoint closure on the tape. Gradient accumulation and every
// reduction run in a fixed order, so identical inputs give bit-identical
// values and gradients across runs.

namespace stvfm {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        fail(ErrorCode::ShapeMismatch,
             std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
class Tape;

template <class T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(data))) {
        if (data_->size() != stvfm::numel(shape_))
            fail(ErrorCode::ShapeMismatch, "tensor data length " + std::to_string(data_->size()) +
                                               " does not match shape " + shape_str(shape_));
    }

    Tensor(Shape shape, std::shared_ptr<std::vector<T>> data, Tape<T>* tape = nullptr, int node = -1)
        : shape_(std::move(shape)), data_(std::move(data)), tape_(tape), node_(node) {}

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor zeros(Shape shape) {
        std::size_t n = stvfm::numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(Shape shape, T v) {
        std::size_t n = stvfm::numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v));
    }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }

    const std::vector<T>& data() const { return *data_; }
    const std::shared_ptr<std::vector<T>>& data_ptr() const { return data_; }

    bool on_tape() const { return tape_ != nullptr; }
    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }

    T item() const {
        if (numel() != 1) fail(ErrorCode::ShapeMismatch, "item(): tensor " + shape_str(shape_) + " is not scalar");
        return (*data_)[0];
    }

    // value-only copy, off any tape
    Tensor detached() const { return Tensor(shape_, data_); }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

    Tensor<T> leaf(Shape shape, std::vector<T> data, bool requires_grad) {
        auto ptr = std::make_shared<std::vector<T>>(std::move(data));
        return leaf(std::move(shape), std::move(ptr), requires_grad);
    }

    Tensor<T> leaf(Shape shape, std::shared_ptr<std::vector<T>> data, bool requires_grad) {
        if (data->size() != stvfm::numel(shape))
            fail(ErrorCode::ShapeMismatch, "leaf data length does not match shape " + shape_str(shape));
        nodes_.push_back(Node{data->size(), {}, requires_grad, nullptr});
        return Tensor<T>(std::move(shape), std::move(data), this, static_cast<int>(nodes_.size()) - 1);
    }

    Tensor<T> emit(Shape shape, std::shared_ptr<std::vector<T>> data, bool needs, BackwardFn bw) {
        nodes_.push_back(Node{data->size(), {}, needs, needs ? std::move(bw) : nullptr});
        return Tensor<T>(std::move(shape), std::move(data), this, static_cast<int>(nodes_.size()) - 1);
    }

    bool needs_grad(int node) const { return node >= 0 && nodes_[static_cast<std::size_t>(node)].needs; }

    void accumulate(int node, const T* g, std::size_t n) {
        if (!needs_grad(node)) return;
        auto& buf = grad_buf(node);
        kernels::acc_add(buf.data(), g, n);
    }

    void accumulate_scaled(int node, const T* g, T s, std::size_t n) {
        if (!needs_grad(node)) return;
        auto& buf = grad_buf(node);
        kernels::acc_scaled(buf.data(), g, s, n);
    }

    // direct access for strided/scattered adjoints; allocates zeros on first use
    std::vector<T>& grad_buf(int node) {
        Node& nd = nodes_[static_cast<std::size_t>(node)];
        if (nd.grad.empty()) nd.grad.assign(nd.size, T(0));
        return nd.grad;
    }

    void backward(const Tensor<T>& root) {
        if (backward_done_)
            fail(ErrorCode::Invalid, "backward already ran on this tape; call reset() first");
        if (root.tape() != this) fail(ErrorCode::Invalid, "backward: root is not on this tape");
        if (root.numel() != 1)
            fail(ErrorCode::ShapeMismatch, "backward: root must be scalar, got " + shape_str(root.shape()));
        backward_done_ = true;
        grad_buf(root.node())[0] += T(1);
        for (int i = root.node(); i >= 0; --i) {
            Node& nd = nodes_[static_cast<std::size_t>(i)];
            if (!nd.backward || nd.grad.empty()) continue;
            nd.backward(*this, nd.grad);
        }
    }

    bool backward_done() const { return backward_done_; }

    void reset() {
        backward_done_ = false;
        for (Node& nd : nodes_) nd.grad.clear();
    }

    // gradient of a tensor on this tape; zeros if no path reached it
    const std::vector<T>& grad(const Tensor<T>& t) {
        if (t.tape() != this) fail(ErrorCode::Invalid, "grad: tensor is not on this tape");
        return grad_buf(t.node());
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::size_t size;
        std::vector<T> grad;
        bool needs;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ---- op plumbing ----

namespace detail {

template <class T>
struct OpCtx {
    Tape<T>* tape = nullptr;
    bool needs = false;
};

template <class T>
OpCtx<T> op_ctx(std::initializer_list<const Tensor<T>*> ins, const char* op) {
    OpCtx<T> ctx;
    for (const Tensor<T>* t : ins) {
        if (!t->on_tape()) continue;
        if (ctx.tape && ctx.tape != t->tape())
            fail(ErrorCode::Invalid, std::string(op) + ": operands live on different tapes");
        ctx.tape = t->tape();
    }
    if (ctx.tape)
        for (const Tensor<T>* t : ins) ctx.needs = ctx.needs || ctx.tape->needs_grad(t->node());
    return ctx;
}

template <class T>
std::shared_ptr<std::vector<T>> alloc(std::size_t n) {
    return std::make_shared<std::vector<T>>(n);
}

template <class T>
void check_finite(const Tensor<T>& x, const char* op) {
    for (T v : x.data())
        if (!std::isfinite(v)) fail(ErrorCode::Numeric, std::string(op) + ": non-finite input value");
}

// iteration frame for ops along one axis: outer * len * inner
struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

} // namespace detail

// ---- elementwise and linear ops ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "add");
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    kernels::add(a.data().data(), b.data().data(), out->data(), n);
    auto ctx = detail::op_ctx<T>({&a, &b}, "add");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), pb = b.node(), n](Tape<T>& tp, const std::vector<T>& g) {
                              tp.accumulate(pa, g.data(), n);
                              tp.accumulate(pb, g.data(), n);
                          });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "sub");
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    kernels::sub(a.data().data(), b.data().data(), out->data(), n);
    auto ctx = detail::op_ctx<T>({&a, &b}, "sub");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), pb = b.node(), n](Tape<T>& tp, const std::vector<T>& g) {
                              tp.accumulate(pa, g.data(), n);
                              tp.accumulate_scaled(pb, g.data(), T(-1), n);
                          });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "mul");
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    kernels::mul(a.data().data(), b.data().data(), out->data(), n);
    auto ctx = detail::op_ctx<T>({&a, &b}, "mul");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), pb = b.node(), da = a.data_ptr(), db = b.data_ptr(),
                           n](Tape<T>& tp, const std::vector<T>& g) {
                              if (tp.needs_grad(pa)) {
                                  std::vector<T> tmp(n);
                                  kernels::mul(g.data(), db->data(), tmp.data(), n);
                                  tp.accumulate(pa, tmp.data(), n);
                              }
                              if (tp.needs_grad(pb)) {
                                  std::vector<T> tmp(n);
                                  kernels::mul(g.data(), da->data(), tmp.data(), n);
                                  tp.accumulate(pb, tmp.data(), n);
                              }
                          });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    kernels::mul(a.data().data(), a.data().data(), out->data(), n);
    auto ctx = detail::op_ctx<T>({&a}, "square");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), da = a.data_ptr(), n](Tape<T>& tp, const std::vector<T>& g) {
                              std::vector<T> tmp(n);
                              kernels::mul(g.data(), da->data(), tmp.data(), n);
                              tp.accumulate_scaled(pa, tmp.data(), T(2), n);
                          });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    kernels::scale(a.data().data(), s, out->data(), n);
    auto ctx = detail::op_ctx<T>({&a}, "scale");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true, [pa = a.node(), s, n](Tape<T>& tp, const std::vector<T>& g) {
        tp.accumulate_scaled(pa, g.data(), s, n);
    });
}

// x[..., D] + bias[D]; the only broadcast in the op set
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() < 1 || bias.rank() != 1 || x.shape().back() != bias.dim(0))
        fail(ErrorCode::ShapeMismatch,
             "add_bias: trailing axis of " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
    const std::size_t cols = bias.dim(0);
    const std::size_t rows = x.numel() / cols;
    auto out = detail::alloc<T>(x.numel());
    kernels::add_bias(x.data().data(), bias.data().data(), out->data(), rows, cols);
    auto ctx = detail::op_ctx<T>({&x, &bias}, "add_bias");
    if (!ctx.needs) return Tensor<T>(x.shape(), out);
    return ctx.tape->emit(x.shape(), out, true,
                          [px = x.node(), pb = bias.node(), rows, cols](Tape<T>& tp, const std::vector<T>& g) {
                              tp.accumulate(px, g.data(), rows * cols);
                              if (tp.needs_grad(pb)) {
                                  auto& buf = tp.grad_buf(pb);
                                  for (std::size_t c = 0; c < cols; ++c) {
                                      T acc = T(0);
                                      for (std::size_t r = 0; r < rows; ++r) acc += g[r * cols + c];
                                      buf[c] += acc;
                                  }
                              }
                          });
}

namespace detail {
template <class T>
void transpose2d(const T* in, T* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}
} // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail(ErrorCode::ShapeMismatch, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::alloc<T>(m * n);
    kernels::matmul(a.data().data(), b.data().data(), out->data(), m, k, n);
    auto ctx = detail::op_ctx<T>({&a, &b}, "matmul");
    if (!ctx.needs) return Tensor<T>({m, n}, out);
    return ctx.tape->emit({m, n}, out, true,
                          [pa = a.node(), pb = b.node(), da = a.data_ptr(), db = b.data_ptr(), m, k,
                           n](Tape<T>& tp, const std::vector<T>& g) {
                              if (tp.needs_grad(pa)) {
                                  // dA = g * B^T
                                  std::vector<T> bt(k * n);
                                  detail::transpose2d(db->data(), bt.data(), k, n);
                                  std::vector<T> tmp(m * k);
                                  kernels::matmul(g.data(), bt.data(), tmp.data(), m, n, k);
                                  tp.accumulate(pa, tmp.data(), m * k);
                              }
                              if (tp.needs_grad(pb)) {
                                  // dB = A^T * g
                                  std::vector<T> at(m * k);
                                  detail::transpose2d(da->data(), at.data(), m, k);
                                  std::vector<T> tmp(k * n);
                                  kernels::matmul(at.data(), g.data(), tmp.data(), k, m, n);
                                  tp.accumulate(pb, tmp.data(), k * n);
                              }
                          });
}

// ---- structural ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.numel())
        fail(ErrorCode::ShapeMismatch, "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    if (!a.on_tape() || !a.tape()->needs_grad(a.node())) return Tensor<T>(std::move(shape), a.data_ptr());
    auto* tape = a.tape();
    return tape->emit(std::move(shape), a.data_ptr(), true,
                      [pa = a.node()](Tape<T>& tp, const std::vector<T>& g) {
                          tp.accumulate(pa, g.data(), g.size());
                      });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t ax0, std::size_t ax1) {
    if (ax0 >= a.rank() || ax1 >= a.rank())
        fail(ErrorCode::ShapeMismatch, "transpose: axes out of range for " + shape_str(a.shape()));
    if (ax0 == ax1) return a;
    if (ax0 > ax1) std::swap(ax0, ax1);
    const Shape& s = a.shape();
    Shape out_shape = s;
    std::swap(out_shape[ax0], out_shape[ax1]);

    // strides of the input, visited in output order
    std::vector<std::size_t> in_strides(s.size(), 1);
    for (std::size_t i = s.size() - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * s[i];
    std::vector<std::size_t> perm(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) perm[i] = i;
    std::swap(perm[ax0], perm[ax1]);

    const std::size_t n = a.numel();
    auto idx_map = std::make_shared<std::vector<std::size_t>>(n);
    {
        std::vector<std::size_t> counter(out_shape.size(), 0);
        for (std::size_t o = 0; o < n; ++o) {
            std::size_t src = 0;
            for (std::size_t d = 0; d < out_shape.size(); ++d) src += counter[d] * in_strides[perm[d]];
            (*idx_map)[o] = src;
            for (std::size_t d = out_shape.size(); d-- > 0;) {
                if (++counter[d] < out_shape[d]) break;
                counter[d] = 0;
            }
        }
    }
    auto out = detail::alloc<T>(n);
    {
        const T* src = a.data().data();
        T* dst = out->data();
        for (std::size_t o = 0; o < n; ++o) dst[o] = src[(*idx_map)[o]];
    }
    auto ctx = detail::op_ctx<T>({&a}, "transpose");
    if (!ctx.needs) return Tensor<T>(std::move(out_shape), out);
    return ctx.tape->emit(std::move(out_shape), out, true,
                          [pa = a.node(), idx_map, n](Tape<T>& tp, const std::vector<T>& g) {
                              auto& buf = tp.grad_buf(pa);
                              for (std::size_t o = 0; o < n; ++o) buf[(*idx_map)[o]] += g[o];
                          });
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    auto v = detail::axis_view(a.shape(), axis);
    if (start + len > v.len)
        fail(ErrorCode::ShapeMismatch, "slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                                           ") exceeds axis length " + std::to_string(v.len));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    const std::size_t n = v.outer * len * v.inner;
    auto out = detail::alloc<T>(n);
    {
        const T* src = a.data().data();
        T* dst = out->data();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < len; ++j) {
                const T* s = src + (o * v.len + start + j) * v.inner;
                T* d = dst + (o * len + j) * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) d[i] = s[i];
            }
    }
    auto ctx = detail::op_ctx<T>({&a}, "slice");
    if (!ctx.needs) return Tensor<T>(std::move(out_shape), out);
    return ctx.tape->emit(std::move(out_shape), out, true,
                          [pa = a.node(), v, start, len](Tape<T>& tp, const std::vector<T>& g) {
                              auto& buf = tp.grad_buf(pa);
                              for (std::size_t o = 0; o < v.outer; ++o)
                                  for (std::size_t j = 0; j < len; ++j) {
                                      T* d = buf.data() + (o * v.len + start + j) * v.inner;
                                      const T* s = g.data() + (o * len + j) * v.inner;
                                      for (std::size_t i = 0; i < v.inner; ++i) d[i] += s[i];
                                  }
                          });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) fail(ErrorCode::Invalid, "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    Shape out_shape = s0;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size()) fail(ErrorCode::ShapeMismatch, "concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.shape()[d] != s0[d])
                fail(ErrorCode::ShapeMismatch,
                     "concat: " + shape_str(p.shape()) + " vs " + shape_str(s0) + " on axis " + std::to_string(axis));
        total += p.shape()[axis];
    }
    out_shape[axis] = total;
    auto v0 = detail::axis_view(out_shape, axis);
    auto out = detail::alloc<T>(numel(out_shape));

    std::vector<const Tensor<T>*> refs;
    refs.reserve(parts.size());
    for (const auto& p : parts) refs.push_back(&p);

    std::size_t offset = 0;
    std::vector<std::size_t> offsets(parts.size());
    std::vector<std::size_t> lens(parts.size());
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& p = parts[pi];
        const std::size_t len = p.shape()[axis];
        offsets[pi] = offset;
        lens[pi] = len;
        const T* src = p.data().data();
        T* dst = out->data();
        for (std::size_t o = 0; o < v0.outer; ++o)
            for (std::size_t j = 0; j < len; ++j) {
                T* d = dst + (o * total + offset + j) * v0.inner;
                const T* s = src + (o * len + j) * v0.inner;
                for (std::size_t i = 0; i < v0.inner; ++i) d[i] = s[i];
            }
        offset += len;
    }

    detail::OpCtx<T> ctx;
    {
        std::vector<const Tensor<T>*> ptrs = refs;
        for (const Tensor<T>* t : ptrs) {
            if (!t->on_tape()) continue;
            if (ctx.tape && ctx.tape != t->tape()) fail(ErrorCode::Invalid, "concat: operands live on different tapes");
            ctx.tape = t->tape();
        }
        if (ctx.tape)
            for (const Tensor<T>* t : ptrs) ctx.needs = ctx.needs || ctx.tape->needs_grad(t->node());
    }
    if (!ctx.needs) return Tensor<T>(std::move(out_shape), out);

    std::vector<int> pnodes(parts.size());
    for (std::size_t pi = 0; pi < parts.size(); ++pi) pnodes[pi] = parts[pi].node();
    return ctx.tape->emit(std::move(out_shape), out, true,
                          [pnodes, offsets, lens, v0, total](Tape<T>& tp, const std::vector<T>& g) {
                              for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
                                  if (!tp.needs_grad(pnodes[pi])) continue;
                                  auto& buf = tp.grad_buf(pnodes[pi]);
                                  const std::size_t len = lens[pi], off = offsets[pi];
                                  for (std::size_t o = 0; o < v0.outer; ++o)
                                      for (std::size_t j = 0; j < len; ++j) {
                                          T* d = buf.data() + (o * len + j) * v0.inner;
                                          const T* s = g.data() + (o * total + off + j) * v0.inner;
                                          for (std::size_t i = 0; i < v0.inner; ++i) d[i] += s[i];
                                      }
                              }
                          });
}

// stack k copies of a 2D matrix vertically: [R x D] -> [k*R x D]
template <class T>
Tensor<T> tile_rows(const Tensor<T>& a, std::size_t k) {
    if (a.rank() != 2) fail(ErrorCode::ShapeMismatch, "tile_rows: expected 2D, got " + shape_str(a.shape()));
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n * k);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < n; ++i) (*out)[c * n + i] = a.data()[i];
    Shape out_shape{a.dim(0) * k, a.dim(1)};
    auto ctx = detail::op_ctx<T>({&a}, "tile_rows");
    if (!ctx.needs) return Tensor<T>(std::move(out_shape), out);
    return ctx.tape->emit(std::move(out_shape), out, true,
                          [pa = a.node(), k, n](Tape<T>& tp, const std::vector<T>& g) {
                              if (!tp.needs_grad(pa)) return;
                              for (std::size_t c = 0; c < k; ++c) tp.accumulate(pa, g.data() + c * n, n);
                          });
}

// out.flat[i] = idx[i] >= 0 ? a.flat[idx[i]] : 0; adjoint scatters with +=
template <class T>
Tensor<T> gather_flat(const Tensor<T>& a, std::shared_ptr<std::vector<long>> idx, Shape out_shape) {
    if (numel(out_shape) != idx->size())
        fail(ErrorCode::ShapeMismatch, "gather_flat: index count does not match output shape");
    const std::size_t n = idx->size();
    auto out = detail::alloc<T>(n);
    {
        const T* src = a.data().data();
        const long limit = static_cast<long>(a.numel());
        for (std::size_t i = 0; i < n; ++i) {
            const long j = (*idx)[i];
            if (j >= limit) fail(ErrorCode::ShapeMismatch, "gather_flat: index out of range");
            (*out)[i] = j >= 0 ? src[j] : T(0);
        }
    }
    auto ctx = detail::op_ctx<T>({&a}, "gather_flat");
    if (!ctx.needs) return Tensor<T>(std::move(out_shape), out);
    return ctx.tape->emit(std::move(out_shape), out, true,
                          [pa = a.node(), idx, n](Tape<T>& tp, const std::vector<T>& g) {
                              auto& buf = tp.grad_buf(pa);
                              for (std::size_t i = 0; i < n; ++i) {
                                  const long j = (*idx)[i];
                                  if (j >= 0) buf[static_cast<std::size_t>(j)] += g[i];
                              }
                          });
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
    auto v = detail::axis_view(a.shape(), axis);
    Shape out_shape;
    for (std::size_t d = 0; d < a.rank(); ++d)
        if (d != axis) out_shape.push_back(a.shape()[d]);
    if (out_shape.empty()) out_shape.push_back(1);
    auto out = detail::alloc<T>(v.outer * v.inner);
    {
        const T* src = a.data().data();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                T acc = T(0);
                for (std::size_t j = 0; j < v.len; ++j) acc += src[(o * v.len + j) * v.inner + i];
                (*out)[o * v.inner + i] = acc;
            }
    }
    auto ctx = detail::op_ctx<T>({&a}, "sum");
    if (!ctx.needs) return Tensor<T>(std::move(out_shape), out);
    return ctx.tape->emit(std::move(out_shape), out, true,
                          [pa = a.node(), v](Tape<T>& tp, const std::vector<T>& g) {
                              auto& buf = tp.grad_buf(pa);
                              for (std::size_t o = 0; o < v.outer; ++o)
                                  for (std::size_t j = 0; j < v.len; ++j)
                                      for (std::size_t i = 0; i < v.inner; ++i)
                                          buf[(o * v.len + j) * v.inner + i] += g[o * v.inner + i];
                          });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
    const std::size_t len = detail::axis_view(a.shape(), axis).len;
    return scale(sum(a, axis), T(1) / static_cast<T>(len));
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    T acc = T(0);
    const T* src = a.data().data();
    for (std::size_t i = 0; i < n; ++i) acc += src[i];
    auto out = std::make_shared<std::vector<T>>(1, acc);
    auto ctx = detail::op_ctx<T>({&a}, "sum_all");
    if (!ctx.needs) return Tensor<T>({1}, out);
    return ctx.tape->emit({1}, out, true, [pa = a.node(), n](Tape<T>& tp, const std::vector<T>& g) {
        if (!tp.needs_grad(pa)) return;
        auto& buf = tp.grad_buf(pa);
        for (std::size_t i = 0; i < n; ++i) buf[i] += g[0];
    });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---- nonlinearities ----

template <class T>
Tensor<T> exp_(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    for (std::size_t i = 0; i < n; ++i) (*out)[i] = std::exp(a.data()[i]);
    auto ctx = detail::op_ctx<T>({&a}, "exp");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), out, n](Tape<T>& tp, const std::vector<T>& g) {
                              std::vector<T> tmp(n);
                              kernels::mul(g.data(), out->data(), tmp.data(), n);
                              tp.accumulate(pa, tmp.data(), n);
                          });
}

template <class T>
Tensor<T> sqrt_(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    kernels::sqrt_v(a.data().data(), out->data(), n);
    auto ctx = detail::op_ctx<T>({&a}, "sqrt");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), out, n](Tape<T>& tp, const std::vector<T>& g) {
                              if (!tp.needs_grad(pa)) return;
                              auto& buf = tp.grad_buf(pa);
                              for (std::size_t i = 0; i < n; ++i) buf[i] += g[i] / (T(2) * (*out)[i]);
                          });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(a.data()[i]);
        (*out)[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    auto ctx = detail::op_ctx<T>({&a}, "gelu");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), da = a.data_ptr(), n](Tape<T>& tp, const std::vector<T>& g) {
                              if (!tp.needs_grad(pa)) return;
                              auto& buf = tp.grad_buf(pa);
                              constexpr double inv_sqrt_2pi = 0.39894228040143267794;
                              for (std::size_t i = 0; i < n; ++i) {
                                  const double x = static_cast<double>((*da)[i]);
                                  const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                                  const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                                  buf[i] += g[i] * static_cast<T>(cdf + x * pdf);
                              }
                          });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    detail::check_finite(a, "softmax");
    auto v = detail::axis_view(a.shape(), axis);
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    {
        const T* src = a.data().data();
        T* dst = out->data();
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const auto at = [&](std::size_t j) { return (o * v.len + j) * v.inner + i; };
                T mx = src[at(0)];
                for (std::size_t j = 1; j < v.len; ++j) mx = std::max(mx, src[at(j)]);
                T denom = T(0);
                for (std::size_t j = 0; j < v.len; ++j) {
                    const T e = std::exp(src[at(j)] - mx);
                    dst[at(j)] = e;
                    denom += e;
                }
                for (std::size_t j = 0; j < v.len; ++j) dst[at(j)] = dst[at(j)] / denom;
            }
    }
    auto ctx = detail::op_ctx<T>({&a}, "softmax");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), out, v](Tape<T>& tp, const std::vector<T>& g) {
                              if (!tp.needs_grad(pa)) return;
                              auto& buf = tp.grad_buf(pa);
                              const T* y = out->data();
                              for (std::size_t o = 0; o < v.outer; ++o)
                                  for (std::size_t i = 0; i < v.inner; ++i) {
                                      const auto at = [&](std::size_t j) { return (o * v.len + j) * v.inner + i; };
                                      T dot = T(0);
                                      for (std::size_t j = 0; j < v.len; ++j) dot += g[at(j)] * y[at(j)];
                                      for (std::size_t j = 0; j < v.len; ++j)
                                          buf[at(j)] += y[at(j)] * (g[at(j)] - dot);
                                  }
                          });
}

// normalize the last axis to zero mean, unit variance (no affine terms)
template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, T eps) {
    detail::check_finite(a, "layer_norm");
    if (a.rank() < 1) fail(ErrorCode::ShapeMismatch, "layer_norm: rank 0");
    const std::size_t d = a.shape().back();
    const std::size_t rows = a.numel() / d;
    const std::size_t n = a.numel();
    auto out = detail::alloc<T>(n);
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    {
        const T* src = a.data().data();
        T* dst = out->data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* x = src + r * d;
            T mu = T(0);
            for (std::size_t i = 0; i < d; ++i) mu += x[i];
            mu /= static_cast<T>(d);
            T var = T(0);
            for (std::size_t i = 0; i < d; ++i) {
                const T c = x[i] - mu;
                var += c * c;
            }
            var /= static_cast<T>(d);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[r] = is;
            for (std::size_t i = 0; i < d; ++i) dst[r * d + i] = (x[i] - mu) * is;
        }
    }
    auto ctx = detail::op_ctx<T>({&a}, "layer_norm");
    if (!ctx.needs) return Tensor<T>(a.shape(), out);
    return ctx.tape->emit(a.shape(), out, true,
                          [pa = a.node(), out, inv_std, rows, d](Tape<T>& tp, const std::vector<T>& g) {
                              if (!tp.needs_grad(pa)) return;
                              auto& buf = tp.grad_buf(pa);
                              const T* y = out->data();
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* gr = g.data() + r * d;
                                  const T* yr = y + r * d;
                                  T mean_g = T(0), mean_gy = T(0);
                                  for (std::size_t i = 0; i < d; ++i) {
                                      mean_g += gr[i];
                                      mean_gy += gr[i] * yr[i];
                                  }
                                  mean_g /= static_cast<T>(d);
                                  mean_gy /= static_cast<T>(d);
                                  const T is = (*inv_std)[r];
                                  for (std::size_t i = 0; i < d; ++i)
                                      buf[r * d + i] += is * (gr[i] - mean_g - yr[i] * mean_gy);
                              }
                          });
}

} // namespace stvfm
